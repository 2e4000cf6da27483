"""Stage-2 objective: adversarial + reconstruction + perceptual + style."""

from __future__ import annotations

import torch

from ..losses import (
    FrozenEmbedding,
    adversarial_pair,
    check_coefficients,
    l1_loss,
    perceptual_loss,
    style_loss,
)

STAGE2_COEFFS = (0.1, 1.0, 1.0, 40.0)  # adversarial, l1, perceptual, style


def stage2_loss(
    recovered: torch.Tensor,
    target: torch.Tensor,
    disc_real: torch.Tensor,
    disc_fake: torch.Tensor,
    embedding: FrozenEmbedding,
    coeffs: tuple[float, float, float, float] = STAGE2_COEFFS,
    saturating: bool = False,
) -> dict[str, torch.Tensor]:
    """All stage-2 terms plus the weighted total; layout mirrors stage 1."""
    check_coefficients(("adversarial", "l1", "perceptual", "style"), coeffs)
    c_adv, c_l1, c_perc, c_style = (float(c) for c in coeffs)

    d_loss, g_loss = adversarial_pair(disc_real, disc_fake, saturating=saturating)
    recon = l1_loss(recovered, target)
    perc = perceptual_loss(recovered, target, embedding)
    style = style_loss(recovered, target, embedding)

    terms = {
        "adversarial": g_loss,
        "l1": recon,
        "perceptual": perc,
        "style": style,
        "adversarial_contribution": c_adv * g_loss,
        "l1_contribution": c_l1 * recon,
        "perceptual_contribution": c_perc * perc,
        "style_contribution": c_style * style,
        "discriminator": d_loss,
    }
    terms["total"] = (
        terms["adversarial_contribution"]
        + terms["l1_contribution"]
        + terms["perceptual_contribution"]
        + terms["style_contribution"]
    )
    return terms
