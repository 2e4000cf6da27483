"""Shared exception vocabulary.

Validation problems (bad shapes, bad values, malformed files) raise ValueError
subclasses so callers and the CLI can map them to a single exit code.
"""


class SizingError(ValueError):
    """A canvas or patch is too small for the requested construction."""


class PlacementError(RuntimeError):
    """No occluder placement reached the target ratio within tolerance.

    Callers are expected to resample the occluder and retry; the search
    itself is deterministic, so retrying with the same inputs cannot help.
    """


class DatasetError(ValueError):
    """A dataset directory is missing pieces or fails validation."""


class ConfigError(ValueError):
    """A configuration value is out of range or unknown."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated, or version-incompatible."""
