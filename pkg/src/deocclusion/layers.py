"""Shared network building blocks and deterministic initialization."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


def seeded_uniform_init_(module: nn.Module, seed: int) -> None:
    """Re-initialize every parameter from one seeded generator.

    Parameters are visited in sorted-name order so the draw sequence, and
    therefore the whole initialization, is a pure function of (architecture,
    seed). Weights use a fan-in scaled uniform; 1-D tensors (biases) reuse
    the fan-in of their sorted-order neighborhood via their own length when
    no better estimate exists.
    """
    rng = np.random.default_rng(int(seed))
    for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        if not param.requires_grad:
            continue
        shape = tuple(param.shape)
        if len(shape) >= 2:
            fan_in = int(np.prod(shape[1:]))
        else:
            fan_in = max(1, shape[0] if shape else 1)
        bound = float(np.sqrt(1.0 / fan_in))
        values = rng.uniform(-bound, bound, size=shape)
        with torch.no_grad():
            param.copy_(torch.from_numpy(values).to(param.dtype))


class PatchDiscriminator(nn.Module):
    """Four stride-2 convs ending in a 1-channel patch probability map.

    Each output cell judges one receptive patch; a 64x64 input yields a
    4x4 map of probabilities (sigmoid applied), which is what the
    adversarial losses expect.
    """

    def __init__(self, in_channels: int, widths: tuple[int, int, int] = (32, 64, 128)):
        super().__init__()
        w1, w2, w3 = widths
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(in_channels, w1, kernel_size=4, stride=2, padding=1),
                nn.Conv2d(w1, w2, kernel_size=4, stride=2, padding=1),
                nn.Conv2d(w2, w3, kernel_size=4, stride=2, padding=1),
                nn.Conv2d(w3, 1, kernel_size=4, stride=2, padding=1),
            ]
        )
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x
        for conv in self.convs[:-1]:
            y = self.act(conv(y))
        return torch.sigmoid(self.convs[-1](y))


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    """Nearest-neighbor 2x upsampling (deterministic)."""
    return torch.nn.functional.interpolate(x, scale_factor=2, mode="nearest")
