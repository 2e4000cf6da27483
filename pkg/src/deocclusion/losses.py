"""Loss primitives shared by both training stages.

All mask/image losses take probabilities in [0, 1] unless the name says
logits. Parsing losses take raw logits and one-hot targets. The perceptual
and style losses run on a frozen random-weight conv embedding; the same
embedding (same seed) must be used for training and for feature-space
evaluation so the numbers are comparable across runs.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

# Probabilities are clamped away from {0, 1} before any log.
PROB_EPS = 1e-7


def _clamp_prob(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def binary_cross_entropy(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean BCE between predicted probabilities and a {0,1} target map."""
    p = _clamp_prob(pred)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def categorical_cross_entropy(logits: torch.Tensor, target_onehot: torch.Tensor) -> torch.Tensor:
    """Mean CE over pixels; ``logits`` and ``target_onehot`` are (B, P, H, W)."""
    if logits.shape != target_onehot.shape:
        raise ValueError(
            f"logits shape {tuple(logits.shape)} != target shape {tuple(target_onehot.shape)}"
        )
    logp = F.log_softmax(logits, dim=1)
    return -(target_onehot * logp).sum(dim=1).mean()


def cross_entropy(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Dispatch on channel count: 1 channel = BCE on probabilities,
    several channels = categorical CE on logits against a one-hot target."""
    if pred.dim() >= 2 and pred.shape[-3] > 1:
        return categorical_cross_entropy(pred, target)
    return binary_cross_entropy(pred, target)


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (pred - target).abs().mean()


def adversarial_pair(
    real_probs: torch.Tensor,
    fake_probs: torch.Tensor,
    saturating: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Discriminator and generator losses from patch probability maps.

    d_loss is the sum of the two expectation terms, so a blind discriminator
    outputting 0.5 everywhere scores exactly 2*ln(2). The generator loss is
    the non-saturating -log D(fake) by default; ``saturating=True`` switches
    to the literal minimax log(1 - D(fake)).
    """
    real = _clamp_prob(real_probs)
    fake = _clamp_prob(fake_probs)
    d_loss = -(real.log().mean() + (1.0 - fake).log().mean())
    if saturating:
        g_loss = (1.0 - fake).log().mean()
    else:
        g_loss = -fake.log().mean()
    return d_loss, g_loss


def as_rgb(x: torch.Tensor) -> torch.Tensor:
    """Replicate a single-channel map to 3 channels for the embedding."""
    if x.shape[-3] == 1:
        return x.expand(*x.shape[:-3], 3, *x.shape[-2:])
    return x


class FrozenEmbedding(nn.Module):
    """Fixed random-weight conv stack used as a shared feature space.

    Three stride-2 conv+tanh blocks; the activations after each block are
    the feature taps for the perceptual and style losses, and the pooled
    final tap is the feature vector for set-level distribution distances.
    Weights are drawn once from a seeded generator and never trained;
    gradients still flow through to the inputs.
    """

    TAP_CHANNELS = (8, 16, 32)

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = int(seed)
        chans = (3,) + self.TAP_CHANNELS
        layers = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers.append(nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1))
        self.blocks = nn.ModuleList(layers)
        rng = np.random.default_rng(self.seed)
        for conv in self.blocks:
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            bound = float(np.sqrt(3.0 / fan_in))
            w = rng.uniform(-bound, bound, size=tuple(conv.weight.shape))
            b = rng.uniform(-0.1, 0.1, size=tuple(conv.bias.shape))
            with torch.no_grad():
                conv.weight.copy_(torch.from_numpy(w))
                conv.bias.copy_(torch.from_numpy(b))
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Feature taps for a (B, 3, H, W) input (1-channel inputs are replicated)."""
        y = as_rgb(x)
        taps = []
        for conv in self.blocks:
            y = torch.tanh(conv(y))
            taps.append(y)
        return taps

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Global-average-pooled final tap, one feature vector per sample."""
        return self.features(x)[-1].mean(dim=(-2, -1))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.features(x)


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """Channel covariance G = f f^T / (C*H*W) for a (B, C, H, W) feature map."""
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / float(c * h * w)


def perceptual_loss(
    pred: torch.Tensor, target: torch.Tensor, embedding: FrozenEmbedding
) -> torch.Tensor:
    """Sum over taps of the mean absolute feature difference."""
    total = None
    for fp, ft in zip(embedding.features(pred), embedding.features(target)):
        term = (fp - ft).abs().mean()
        total = term if total is None else total + term
    return total


def style_loss(
    pred: torch.Tensor, target: torch.Tensor, embedding: FrozenEmbedding
) -> torch.Tensor:
    """Sum over taps of the mean absolute Gram-matrix difference."""
    total = None
    for fp, ft in zip(embedding.features(pred), embedding.features(target)):
        term = (gram_matrix(fp) - gram_matrix(ft)).abs().mean()
        total = term if total is None else total + term
    return total


def check_coefficients(names: tuple[str, ...], values: tuple[float, ...]) -> None:
    """Loss coefficients must be finite and non-negative."""
    for name, value in zip(names, values):
        v = float(value)
        if not np.isfinite(v) or v < 0.0:
            raise ConfigError(f"loss coefficient {name} must be >= 0, got {value!r}")
