"""Pose template bank: seeded k-means over training masks, plus the
inverse-distance attention that injects the bank into completion."""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from PIL import Image

DISTANCE_EPS = 1e-6


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Standard k-means++ seeding; consumes exactly one rng.integers call and
    k-1 rng.choice calls so the draw sequence is easy to reproduce."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans_lloyd(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    rel_tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations with k-means++ seeding.

    Returns (centers, assignments, objective_history). The objective is the
    sum of squared distances to assigned centers, recorded once per
    iteration; it never increases. Stops when the relative improvement
    drops below rel_tol or after max_iter iterations. Empty clusters are
    re-seeded on the point currently farthest from its center.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(points, k, rng)
    history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    prev = np.inf
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        per_point = d2[np.arange(n), assign]
        obj = float(per_point.sum())
        history.append(obj)
        for j in range(k):
            chosen = assign == j
            if chosen.any():
                centers[j] = points[chosen].mean(axis=0)
            else:
                centers[j] = points[int(per_point.argmax())]
        if prev - obj <= rel_tol * max(prev, 1e-12):
            break
        prev = obj
    return centers, assign, history


@dataclasses.dataclass
class TemplateBank:
    """K soft pose templates at a fixed working resolution."""

    templates: np.ndarray  # (K, h, w) float32 in [0, 1]
    seed: int
    source_count: int

    @property
    def resolution(self) -> tuple[int, int]:
        return self.templates.shape[1], self.templates.shape[2]


def build_template_bank(
    masks: list[np.ndarray],
    k: int = 16,
    seed: int = 0,
    resolution: tuple[int, int] = (64, 64),
) -> TemplateBank:
    """Cluster binary masks into K mean-shape templates."""
    if len(masks) < k:
        raise ValueError(f"need at least k={k} masks to build the bank, got {len(masks)}")
    th, tw = resolution
    flat = np.stack(
        [
            np.asarray(
                Image.fromarray((m > 0.5).astype(np.uint8)).resize((tw, th), Image.NEAREST),
                dtype=np.float64,
            ).reshape(-1)
            for m in masks
        ]
    )
    centers, _, _ = kmeans_lloyd(flat, k, seed=seed)
    templates = centers.reshape(k, th, tw).astype(np.float32)
    return TemplateBank(templates=np.clip(templates, 0.0, 1.0), seed=int(seed),
                        source_count=len(masks))


def inverse_distance_weights(mask: torch.Tensor, templates: torch.Tensor) -> torch.Tensor:
    """Per-template weights 1 / (distance + eps) for a batch of masks.

    ``mask`` is (B, 1, h, w) at template resolution; ``templates`` is
    (K, h, w). Distance is the plain euclidean norm over pixels, so a
    template at distance 0.5 weighs about 2.0 and one at distance 2.0
    about 0.5.
    """
    diff = mask - templates.unsqueeze(0)  # (B, K, h, w)
    dist = diff.flatten(2).norm(dim=2)
    return 1.0 / (dist + DISTANCE_EPS)


class TemplateAttention(nn.Module):
    """Blend the bank by inverse distance to the current modal estimate.

    The soft modal mask is resized to template resolution, each template is
    scaled by 1/(distance + eps), and a 1x1 conv mixes the weighted stack
    into a feature map that is resized back to the working resolution.
    """

    def __init__(self, bank: TemplateBank, out_channels: int = 8):
        super().__init__()
        self.register_buffer("templates", torch.from_numpy(bank.templates.copy()))
        self.combine = nn.Conv2d(bank.templates.shape[0], out_channels, kernel_size=1)

    def forward(self, soft_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if soft_mask.dim() != 4 or soft_mask.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) mask, got {tuple(soft_mask.shape)}")
        th, tw = self.templates.shape[-2:]
        templates = self.templates.to(soft_mask.dtype)
        small = F.interpolate(soft_mask, size=(th, tw), mode="bilinear", align_corners=False)
        weights = inverse_distance_weights(small, templates)  # (B, K)
        weighted = templates.unsqueeze(0) * weights[:, :, None, None]
        feat = self.combine(weighted)
        feat = F.interpolate(feat, size=soft_mask.shape[-2:], mode="bilinear", align_corners=False)
        return feat, weights
