"""Two-stage human de-occlusion on synthetic desk-scale data.

Stage one completes a corrupted visible mask into modal and amodal masks
plus part parsings; stage two paints the hidden region with a
partial-convolution network steered by parsing-guided attention.
"""

from .config import TrainConfig, load_config, parse_config_file
from .datagen import (
    HumanRecord,
    OcclusionSample,
    RatioDistribution,
    TRAIN_RATIOS,
    VAL_RATIOS,
    build_dataset,
    compose_occlusion,
    corrupt_modal_mask,
    generate_human,
    generate_occluder,
    ingest_external,
    load_dataset,
    occlusion_ratio,
    sample_ratio,
    save_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    PlacementError,
    SizingError,
)
from .evalkit import MetricReport, evaluate, frechet_distance, iou, iou_triplet, l1_error
from .losses import FrozenEmbedding, perceptual_loss, style_loss
from .maskcomp import (
    MaskCompletionNet,
    TemplateBank,
    build_template_bank,
    binarize,
    invisible_mask,
    kmeans_lloyd,
    stage1_loss,
)
from .pipeline import batch_from_samples, cascade_infer
from .recovery import PartialConv2d, RecoveryNet, partial_conv, relation_matrix, stage2_loss
from .train import (
    load_stage1,
    load_stage2,
    save_stage1,
    save_stage2,
    train_stage1,
    train_stage2,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "FrozenEmbedding",
    "HumanRecord",
    "MaskCompletionNet",
    "MetricReport",
    "OcclusionSample",
    "PartialConv2d",
    "PlacementError",
    "RatioDistribution",
    "RecoveryNet",
    "SizingError",
    "TRAIN_RATIOS",
    "TemplateBank",
    "TrainConfig",
    "VAL_RATIOS",
    "batch_from_samples",
    "binarize",
    "build_dataset",
    "build_template_bank",
    "cascade_infer",
    "compose_occlusion",
    "corrupt_modal_mask",
    "evaluate",
    "frechet_distance",
    "generate_human",
    "generate_occluder",
    "ingest_external",
    "invisible_mask",
    "iou",
    "iou_triplet",
    "kmeans_lloyd",
    "l1_error",
    "load_config",
    "load_dataset",
    "load_stage1",
    "load_stage2",
    "occlusion_ratio",
    "parse_config_file",
    "partial_conv",
    "perceptual_loss",
    "relation_matrix",
    "sample_ratio",
    "save_dataset",
    "save_stage1",
    "save_stage2",
    "stage1_loss",
    "stage2_loss",
    "style_loss",
    "train_stage1",
    "train_stage2",
    "__version__",
]
