"""Parsing-guided attention: a body-part stream and a visible-to-invisible
relation stream, assembled by fusion (default) or in cascade."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

ASSEMBLIES = ("fusion", "cascade")


def relation_matrix(
    key_visible: torch.Tensor,
    key_amodal: torch.Tensor,
    visible_mask: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Affinity from visible pixels (rows) to all pixels (columns).

    ``key_visible``/``key_amodal`` are (B, D, H, W) key maps; ``visible_mask``
    is (B, 1, H, W). Keys are masked (rows by the visible mask, columns by
    its complement) and correlated; the softmax runs over the row axis, so
    every column sums to 1. Two structural artifacts follow directly: rows
    at invisible pixels are exactly zero before the softmax, and columns at
    visible pixels (zeroed by the complement) come out uniform 1/(H*W).

    Returns (softmaxed matrix, pre-softmax scores), both (B, H*W, H*W).
    """
    b, d, h, w = key_visible.shape
    v = visible_mask.reshape(b, 1, h * w)
    q = (key_visible.reshape(b, d, h * w) * v).transpose(1, 2)  # (B, HW, D)
    k = key_amodal.reshape(b, d, h * w) * (1.0 - v)  # (B, D, HW)
    scores = torch.bmm(q, k)  # (B, HW rows=visible side, HW cols)
    return F.softmax(scores, dim=1), scores


class BodyStream(nn.Module):
    """Part-aware reweighting: the input feature is squeezed to one channel
    per part, multiplied with both parsing maps, and the two products are
    fused back to ``out_channels``."""

    def __init__(self, channels: int, part_count: int, out_channels: int):
        super().__init__()
        self.reduce = nn.Conv2d(channels, part_count, kernel_size=1)
        self.fuse = nn.Conv2d(2 * part_count, out_channels, kernel_size=1)

    def forward(
        self,
        feature: torch.Tensor,
        modal_parsing: torch.Tensor,
        amodal_parsing: torch.Tensor,
    ) -> torch.Tensor:
        parts = self.reduce(feature)
        return self.fuse(torch.cat([parts * modal_parsing, parts * amodal_parsing], dim=1))


class RelationStream(nn.Module):
    """Keys from feature + parsing, aggregation through the relation matrix."""

    def __init__(self, channels: int, part_count: int, key_dim: int = 16):
        super().__init__()
        self.key_visible = nn.Conv2d(channels + part_count, key_dim, kernel_size=1)
        self.key_amodal = nn.Conv2d(channels + part_count, key_dim, kernel_size=1)

    def matrix(
        self,
        feature: torch.Tensor,
        modal_parsing: torch.Tensor,
        amodal_parsing: torch.Tensor,
        visible_mask: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        k_vis = self.key_visible(torch.cat([feature, modal_parsing], dim=1))
        k_amo = self.key_amodal(torch.cat([feature, amodal_parsing], dim=1))
        return relation_matrix(k_vis, k_amo, visible_mask)

    def forward(
        self,
        feature: torch.Tensor,
        modal_parsing: torch.Tensor,
        amodal_parsing: torch.Tensor,
        visible_mask: torch.Tensor,
    ) -> torch.Tensor:
        b, c, h, w = feature.shape
        relation, _ = self.matrix(feature, modal_parsing, amodal_parsing, visible_mask)
        flat = feature.reshape(b, c, h * w)
        out = torch.bmm(flat, relation)  # column q pools visible-side features
        return out.reshape(b, c, h, w)


class GuidedAttention(nn.Module):
    """One attention block at one decoder scale.

    fusion: concat(input, body out, relation out) -> 1x1 conv back to the
    input width. cascade: body first, then relation on the body's output.
    Either stream can be disabled (for ablation); with both off the block
    is the identity.
    """

    def __init__(
        self,
        channels: int,
        part_count: int,
        key_dim: int = 16,
        assembly: str = "fusion",
        use_body: bool = True,
        use_relation: bool = True,
    ):
        super().__init__()
        if assembly not in ASSEMBLIES:
            raise ValueError(f"assembly must be one of {ASSEMBLIES}, got {assembly!r}")
        self.assembly = assembly
        self.use_body = bool(use_body)
        self.use_relation = bool(use_relation)
        self.body = BodyStream(channels, part_count, channels) if use_body else None
        self.relation = RelationStream(channels, part_count, key_dim) if use_relation else None
        if assembly == "fusion":
            n_in = channels * (1 + int(use_body) + int(use_relation))
            self.merge = nn.Conv2d(n_in, channels, kernel_size=1) if n_in > channels else None
        else:
            self.merge = None

    def forward(
        self,
        feature: torch.Tensor,
        modal_parsing: torch.Tensor,
        amodal_parsing: torch.Tensor,
        visible_mask: torch.Tensor,
    ) -> torch.Tensor:
        if not (self.use_body or self.use_relation):
            return feature
        if self.assembly == "fusion":
            pieces = [feature]
            if self.body is not None:
                pieces.append(self.body(feature, modal_parsing, amodal_parsing))
            if self.relation is not None:
                pieces.append(self.relation(feature, modal_parsing, amodal_parsing, visible_mask))
            return self.merge(torch.cat(pieces, dim=1))
        y = feature
        if self.body is not None:
            y = self.body(y, modal_parsing, amodal_parsing)
        if self.relation is not None:
            y = self.relation(y, modal_parsing, amodal_parsing, visible_mask)
        return y
