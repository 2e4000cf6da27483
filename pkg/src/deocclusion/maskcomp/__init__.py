from .templates import (
    TemplateAttention,
    TemplateBank,
    build_template_bank,
    inverse_distance_weights,
    kmeans_lloyd,
)
from .hourglass import Hourglass
from .model import (
    BINARIZE_THRESHOLD,
    MaskCompletionNet,
    StageOneOutput,
    binarize,
    invisible_mask,
    make_mask_discriminator,
)
from .loss import STAGE1_COEFFS, stage1_loss

__all__ = [
    "TemplateAttention",
    "TemplateBank",
    "build_template_bank",
    "inverse_distance_weights",
    "kmeans_lloyd",
    "Hourglass",
    "MaskCompletionNet",
    "StageOneOutput",
    "BINARIZE_THRESHOLD",
    "binarize",
    "invisible_mask",
    "make_mask_discriminator",
    "STAGE1_COEFFS",
    "stage1_loss",
]
