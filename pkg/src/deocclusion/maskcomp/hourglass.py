"""Hourglass encoder-decoder with mask and parsing heads."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..layers import upsample2x


class Hourglass(nn.Module):
    """Constant-width hourglass: ``depth`` stride-2 downs, skip additions
    on the way back up, then a 1-channel sigmoid mask head and a
    ``part_count``-channel parsing head (raw logits).

    Input spatial size must be divisible by 2**depth.
    """

    def __init__(self, in_channels: int, part_count: int, width: int = 32, depth: int = 3):
        super().__init__()
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        self.depth = depth
        self.stem = nn.Conv2d(in_channels, width, kernel_size=3, padding=1)
        self.downs = nn.ModuleList(
            nn.Conv2d(width, width, kernel_size=3, stride=2, padding=1) for _ in range(depth)
        )
        self.mid = nn.Conv2d(width, width, kernel_size=3, padding=1)
        self.ups = nn.ModuleList(
            nn.Conv2d(width, width, kernel_size=3, padding=1) for _ in range(depth)
        )
        self.mask_head = nn.Conv2d(width, 1, kernel_size=1)
        self.parsing_head = nn.Conv2d(width, part_count, kernel_size=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        h, w = x.shape[-2:]
        factor = 2 ** self.depth
        if h % factor or w % factor:
            raise ValueError(f"input {h}x{w} not divisible by 2**depth = {factor}")
        feats = [self.act(self.stem(x))]
        for down in self.downs:
            feats.append(self.act(down(feats[-1])))
        y = self.act(self.mid(feats[-1]))
        for up, skip in zip(self.ups, reversed(feats[:-1])):
            y = self.act(up(upsample2x(y) + skip))
        mask = torch.sigmoid(self.mask_head(y))
        parsing = self.parsing_head(y)
        return mask, parsing, y
