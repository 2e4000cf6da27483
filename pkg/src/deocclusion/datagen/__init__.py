from .synth import (
    HumanRecord,
    OccluderPatch,
    MARGIN,
    generate_human,
    generate_occluder,
    labels_to_onehot,
)
from .compose import (
    OcclusionSample,
    RatioDistribution,
    TRAIN_RATIOS,
    VAL_RATIOS,
    compose_occlusion,
    corrupt_modal_mask,
    ingest_external,
    occlusion_ratio,
    sample_ratio,
)
from .store import build_dataset, load_dataset, save_dataset, sample_seed

__all__ = [
    "HumanRecord",
    "OccluderPatch",
    "OcclusionSample",
    "RatioDistribution",
    "TRAIN_RATIOS",
    "VAL_RATIOS",
    "MARGIN",
    "generate_human",
    "generate_occluder",
    "labels_to_onehot",
    "compose_occlusion",
    "corrupt_modal_mask",
    "ingest_external",
    "occlusion_ratio",
    "sample_ratio",
    "build_dataset",
    "load_dataset",
    "save_dataset",
    "sample_seed",
]
