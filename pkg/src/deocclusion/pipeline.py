"""Gluing the two stages into one inference cascade."""

from __future__ import annotations

import numpy as np
import torch

from .datagen import OcclusionSample
from .maskcomp import MaskCompletionNet, binarize, invisible_mask
from .recovery import RecoveryNet, composite


def to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr)).float()


def batch_from_samples(samples: list[OcclusionSample]) -> dict[str, torch.Tensor]:
    """Stack dataset samples into named (B, C, H, W) tensors."""
    def stack(attr: str, add_channel: bool = False) -> torch.Tensor:
        arrs = [getattr(s, attr) for s in samples]
        t = to_tensor(np.stack(arrs))
        return t.unsqueeze(1) if add_channel else t

    return {
        "occluded_image": stack("occluded_image"),
        "full_image": stack("full_image"),
        "initial_mask": stack("initial_mask", add_channel=True),
        "modal_mask": stack("modal_mask", add_channel=True),
        "amodal_mask": stack("amodal_mask", add_channel=True),
        "modal_parsing": stack("modal_parsing"),
        "amodal_parsing": stack("amodal_parsing"),
    }


def onehot_from_logits(logits: torch.Tensor) -> torch.Tensor:
    """Argmax over the channel axis, back to a one-hot float map."""
    idx = logits.argmax(dim=1, keepdim=True)
    return torch.zeros_like(logits).scatter_(1, idx, 1.0)


@torch.no_grad()
def cascade_infer(
    stage1: MaskCompletionNet,
    stage2: RecoveryNet | None,
    occluded_image: torch.Tensor,
    initial_mask: torch.Tensor,
) -> dict[str, torch.Tensor]:
    """Run completion then recovery on a batch.

    Binarized masks are post-processed by intersection so the visible
    region can never exceed the full-body region; the number of pixels
    that violated the nesting before the fix is reported per batch.
    Stage 2 consumes the stage-1 masks and argmax parsings; the composite
    keeps visible pixels bit-exact from the input.
    """
    out1 = stage1(occluded_image, initial_mask)
    modal_soft, amodal_soft = out1.modal, out1.amodal
    modal_bin = binarize(modal_soft)
    amodal_bin = binarize(amodal_soft)
    violations = int((modal_bin * (1.0 - amodal_bin)).sum().item())
    modal_bin = modal_bin * amodal_bin  # nesting fix: keep modal inside amodal
    invisible = invisible_mask(amodal_bin, modal_bin)

    modal_parsing = onehot_from_logits(out1.modal_parsing)
    amodal_parsing = onehot_from_logits(out1.amodal_parsing)

    result = {
        "modal_soft": modal_soft,
        "amodal_soft": amodal_soft,
        "modal": modal_bin,
        "amodal": amodal_bin,
        "invisible": invisible,
        "modal_parsing": modal_parsing,
        "amodal_parsing": amodal_parsing,
        "nesting_violations": torch.tensor(violations),
    }
    if stage2 is not None:
        recovered, validity = stage2(
            occluded_image, modal_bin, amodal_bin, modal_parsing, amodal_parsing
        )
        result["recovered"] = recovered
        result["validity"] = validity
        result["composite"] = composite(recovered, occluded_image, modal_bin)
    return result
