"""Partial convolution: convolve only over valid pixels, renormalize.

The validity mask is a single channel shared by all feature channels. Each
output position is scaled by |window| / (number of valid pixels in the
window); positions whose window holds no valid pixel output exactly zero,
and the propagated mask marks positions with at least one valid input.
With an all-ones mask the op reduces to a dense convolution.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def partial_conv(
    x: torch.Tensor,
    mask: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Functional form. ``x`` is (B, C, H, W), ``mask`` is (B, 1, H, W)."""
    if mask.shape[1] != 1:
        raise ValueError(f"validity mask must have 1 channel, got {mask.shape[1]}")
    if mask.shape[0] != x.shape[0] or mask.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match input {tuple(x.shape)}")
    kh, kw = weight.shape[-2:]
    window = float(kh * kw)
    with torch.no_grad():
        ones = torch.ones(1, 1, kh, kw, dtype=x.dtype, device=x.device)
        valid_count = F.conv2d(mask, ones, stride=stride, padding=padding)
        any_valid = valid_count > 0
        scale = torch.where(any_valid, window / valid_count.clamp(min=1e-8),
                            torch.zeros_like(valid_count))
        new_mask = any_valid.to(x.dtype)
    out = F.conv2d(x * mask, weight, bias=None, stride=stride, padding=padding)
    out = out * scale
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1) * new_mask
    return out, new_mask


class PartialConv2d(nn.Conv2d):
    """nn.Conv2d whose forward takes and returns a validity mask."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if self.dilation != (1, 1) or self.groups != 1:
            raise ValueError("partial conv supports dilation=1, groups=1")
        if self.padding_mode != "zeros":
            raise ValueError("partial conv supports zero padding only")

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return partial_conv(
            x, mask, self.weight, self.bias,
            stride=self.stride[0], padding=self.padding[0],
        )
