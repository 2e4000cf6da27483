"""Stage-1 objective: segmentation + adversarial + generation terms."""

from __future__ import annotations

import torch

from ..losses import (
    FrozenEmbedding,
    adversarial_pair,
    as_rgb,
    binary_cross_entropy,
    categorical_cross_entropy,
    check_coefficients,
    l1_loss,
    perceptual_loss,
)
from .model import StageOneOutput

STAGE1_COEFFS = (1.0, 1.0, 0.1)  # segmentation, adversarial, generation


def stage1_loss(
    outputs: StageOneOutput,
    modal_target: torch.Tensor,
    amodal_target: torch.Tensor,
    modal_parsing_target: torch.Tensor,
    amodal_parsing_target: torch.Tensor,
    disc_real: torch.Tensor,
    disc_fake: torch.Tensor,
    embedding: FrozenEmbedding,
    coeffs: tuple[float, float, float] = STAGE1_COEFFS,
    saturating: bool = False,
) -> dict[str, torch.Tensor]:
    """All stage-1 loss terms plus the weighted total.

    The segmentation term is the sum of four cross-entropies (both masks,
    both parsings); the generation term is l1 plus the embedding-space
    perceptual distance on the completed mask; the adversarial term is the
    generator side of the patch critic. The returned dict carries each raw
    term, its weighted contribution, the discriminator loss (not part of
    the total), and the total itself.
    """
    check_coefficients(("segmentation", "adversarial", "generation"), coeffs)
    c_seg, c_adv, c_gen = (float(c) for c in coeffs)

    segmentation = (
        binary_cross_entropy(outputs.modal, modal_target)
        + binary_cross_entropy(outputs.amodal, amodal_target)
        + categorical_cross_entropy(outputs.modal_parsing, modal_parsing_target)
        + categorical_cross_entropy(outputs.amodal_parsing, amodal_parsing_target)
    )
    d_loss, g_loss = adversarial_pair(disc_real, disc_fake, saturating=saturating)
    generation = l1_loss(outputs.amodal, amodal_target) + perceptual_loss(
        as_rgb(outputs.amodal), as_rgb(amodal_target), embedding
    )

    terms = {
        "segmentation": segmentation,
        "adversarial": g_loss,
        "generation": generation,
        "segmentation_contribution": c_seg * segmentation,
        "adversarial_contribution": c_adv * g_loss,
        "generation_contribution": c_gen * generation,
        "discriminator": d_loss,
    }
    terms["total"] = (
        terms["segmentation_contribution"]
        + terms["adversarial_contribution"]
        + terms["generation_contribution"]
    )
    return terms
