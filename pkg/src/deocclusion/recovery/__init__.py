from .partialconv import PartialConv2d, partial_conv
from .pga import (
    ASSEMBLIES,
    BodyStream,
    GuidedAttention,
    RelationStream,
    relation_matrix,
)
from .model import (
    DEFAULT_BACKGROUND_WEIGHT,
    DEFAULT_WIDTHS,
    RecoveryNet,
    apply_background_proportion,
    composite,
    initial_validity,
    make_image_discriminator,
    select_attention_scales,
)
from .loss import STAGE2_COEFFS, stage2_loss

__all__ = [
    "PartialConv2d",
    "partial_conv",
    "ASSEMBLIES",
    "BodyStream",
    "GuidedAttention",
    "RelationStream",
    "relation_matrix",
    "RecoveryNet",
    "DEFAULT_WIDTHS",
    "DEFAULT_BACKGROUND_WEIGHT",
    "apply_background_proportion",
    "composite",
    "initial_validity",
    "make_image_discriminator",
    "select_attention_scales",
    "STAGE2_COEFFS",
    "stage2_loss",
]
