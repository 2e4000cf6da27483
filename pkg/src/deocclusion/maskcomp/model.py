"""Stage 1: modal refinement then amodal completion, template-guided."""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from ..layers import PatchDiscriminator, seeded_uniform_init_
from .hourglass import Hourglass
from .templates import TemplateAttention, TemplateBank

BINARIZE_THRESHOLD = 0.5


def binarize(soft, threshold: float = BINARIZE_THRESHOLD):
    """Threshold a probability map to {0, 1}; exact ties go to 1.

    Works on torch tensors and numpy arrays alike, preserving float dtype.
    """
    hard = soft >= threshold
    if isinstance(soft, torch.Tensor):
        return hard.to(soft.dtype)
    return hard.astype(np.asarray(soft).dtype)


def invisible_mask(amodal, modal):
    """Occluded-but-present region: amodal AND NOT modal, for binary inputs."""
    return amodal * (1 - modal)


@dataclasses.dataclass
class StageOneOutput:
    """Soft predictions from one forward pass (parsings are raw logits)."""

    modal: torch.Tensor  # (B, 1, H, W) probabilities
    modal_parsing: torch.Tensor  # (B, P, H, W) logits
    amodal: torch.Tensor  # (B, 1, H, W) probabilities
    amodal_parsing: torch.Tensor  # (B, P, H, W) logits
    feature: torch.Tensor  # (B, width, H, W) shared trunk feature


class MaskCompletionNet(nn.Module):
    """Two chained hourglasses.

    The first refines the rough visible-region estimate from image plus
    initial mask. The second sees the first's trunk feature, its soft modal
    mask, and the template-attention feature keyed by that mask, and
    completes the full-body mask. Both emit parsing logits.
    """

    def __init__(
        self,
        part_count: int,
        bank: TemplateBank,
        width: int = 32,
        depth: int = 3,
        attention_channels: int = 8,
        init_seed: int = 0,
    ):
        super().__init__()
        self.part_count = int(part_count)
        self.width = int(width)
        self.depth = int(depth)
        self.attention_channels = int(attention_channels)
        self.init_seed = int(init_seed)
        self.modal_net = Hourglass(3 + 1, part_count, width=width, depth=depth)
        self.attention = TemplateAttention(bank, out_channels=attention_channels)
        self.amodal_net = Hourglass(width + 1 + attention_channels, part_count,
                                    width=width, depth=depth)
        seeded_uniform_init_(self, init_seed)

    def modal_forward(
        self, image: torch.Tensor, initial_mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(image, rough mask) -> (refined modal, modal parsing logits, trunk feature)."""
        x = torch.cat([image, initial_mask], dim=1)
        return self.modal_net(x)

    def amodal_forward(
        self, feature: torch.Tensor, modal: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(trunk feature, soft modal) -> (amodal, amodal parsing logits)."""
        guide, _ = self.attention(modal)
        x = torch.cat([feature, modal, guide], dim=1)
        amodal, parsing, _ = self.amodal_net(x)
        return amodal, parsing

    def forward(self, image: torch.Tensor, initial_mask: torch.Tensor) -> StageOneOutput:
        modal, modal_parsing, feature = self.modal_forward(image, initial_mask)
        amodal, amodal_parsing = self.amodal_forward(feature, modal)
        return StageOneOutput(
            modal=modal,
            modal_parsing=modal_parsing,
            amodal=amodal,
            amodal_parsing=amodal_parsing,
            feature=feature,
        )


def make_mask_discriminator(init_seed: int = 1) -> PatchDiscriminator:
    """Patch critic over 1-channel mask maps."""
    disc = PatchDiscriminator(in_channels=1)
    seeded_uniform_init_(disc, init_seed)
    return disc
