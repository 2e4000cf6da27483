"""Training configuration: one flat dataclass, file + CLI override parsing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

from .errors import ConfigError

RUN_DIR_ENV = "DEOCCLUSION_RUN_DIR"

STAGES = ("mask", "recover")
OPTIMIZERS = ("sgd", "adam")


@dataclasses.dataclass
class TrainConfig:
    """Every knob for both stages; unknown keys and bad values are rejected.

    Defaults are the desk-scale setup: 64x64 canvas, batch 8, 2000
    iterations. ``optimizer`` and ``lr`` default per stage (mask: sgd at
    1e-3, recover: adam at 1e-4) when left unset.
    """

    stage: str = "mask"
    canvas: int = 64
    part_count: int = 7
    batch_size: int = 8
    iterations: int = 2000
    seed: int = 0
    deterministic: bool = True

    optimizer: str = ""
    lr: float = 0.0
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999

    # stage-1 weights: segmentation, adversarial, generation
    lambda_seg: float = 1.0
    lambda_adv: float = 1.0
    lambda_gen: float = 0.1
    # stage-2 weights: adversarial, l1, perceptual, style
    beta_adv: float = 0.1
    beta_l1: float = 1.0
    beta_perc: float = 1.0
    beta_style: float = 40.0
    saturating_gan: bool = False

    hourglass_width: int = 32
    hourglass_depth: int = 3
    attention_channels: int = 8
    template_count: int = 16
    template_resolution: int = 64

    recovery_widths: str = "16,32,48,64"
    background_weight: float = 0.3
    pga_assembly: str = "fusion"
    pga_body: bool = True
    pga_relation: bool = True
    pga_key_dim: int = 16
    pga_max_cells: int = 4096

    embedding_seed: int = 0
    corrupt_severity: float = 0.3

    log_interval: int = 50
    eval_interval: int = 25
    stop_amodal_iou: float = -1.0  # negative disables the early-stop check
    stop_invisible_iou: float = -1.0
    stop_invisible_l1: float = -1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.optimizer and self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        for name in ("lambda_seg", "lambda_adv", "lambda_gen",
                     "beta_adv", "beta_l1", "beta_perc", "beta_style"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not (0.0 <= self.background_weight <= 1.0):
            raise ConfigError(f"background_weight must be in [0, 1], got {self.background_weight}")
        if not (0.0 <= self.corrupt_severity <= 1.0):
            raise ConfigError(f"corrupt_severity must be in [0, 1], got {self.corrupt_severity}")
        for name in ("canvas", "part_count", "batch_size", "hourglass_width",
                     "hourglass_depth", "attention_channels", "template_count",
                     "template_resolution", "pga_key_dim", "pga_max_cells",
                     "log_interval", "eval_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.part_count < 2:
            raise ConfigError(f"part_count must be >= 2, got {self.part_count}")
        # both networks halve the resolution repeatedly, and the figure
        # generator needs room for a margin
        stride = max(2 ** self.hourglass_depth, 2 ** len(self.widths()))
        if self.canvas < 32 or self.canvas % stride != 0:
            raise ConfigError(
                f"canvas must be >= 32 and divisible by {stride}, got {self.canvas}")
        if self.pga_assembly not in ("fusion", "cascade"):
            raise ConfigError(f"pga_assembly must be fusion or cascade, got {self.pga_assembly!r}")
        try:
            widths = self.widths()
        except ValueError as e:
            raise ConfigError(f"recovery_widths: {e}") from e
        if any(w < 1 for w in widths):
            raise ConfigError(f"recovery widths must be >= 1, got {widths}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")

    def widths(self) -> tuple[int, ...]:
        parts = [p.strip() for p in self.recovery_widths.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty width list")
        return tuple(int(p) for p in parts)

    def resolved_optimizer(self) -> tuple[str, float]:
        """Per-stage defaults: (sgd, 1e-3) for masks, (adam, 1e-4) for recovery."""
        kind = self.optimizer or ("sgd" if self.stage == "mask" else "adam")
        lr = self.lr if self.lr > 0 else (1e-3 if kind == "sgd" else 1e-4)
        return kind, lr

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON form; stable across runs."""
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, raw: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    typ = _FIELDS[name].type
    text = raw.strip()
    try:
        if typ in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if typ in ("int", int):
            return int(text)
        if typ in ("float", float):
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"config key {name}: {e}") from e


def parse_config_file(path: str) -> dict:
    """Flat key=value lines; blank lines and #-comments are skipped."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, _, raw = text.partition("=")
            values[key.strip()] = _coerce(key.strip(), raw)
    return values


def load_config(
    path: str | None = None,
    overrides: list[str] | None = None,
    **direct,
) -> TrainConfig:
    """Defaults, then file values, then key=value overrides, then kwargs."""
    values: dict = {}
    if path:
        values.update(parse_config_file(path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        values[key.strip()] = _coerce(key.strip(), raw)
    for key, val in direct.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return TrainConfig(**values)


def run_dir(cli_value: str | None, default: str) -> str:
    """Output directory: CLI flag beats the environment beats the default.
    The directory is created if needed."""
    out = cli_value or os.environ.get(RUN_DIR_ENV) or default
    os.makedirs(out, exist_ok=True)
    return out
