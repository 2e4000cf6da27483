"""Stage 2: appearance recovery with a partial-conv UNet and guided attention."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError
from ..layers import PatchDiscriminator, seeded_uniform_init_
from .partialconv import PartialConv2d
from .pga import GuidedAttention

DEFAULT_WIDTHS = (16, 32, 48, 64)
ATTENTION_MAX_CELLS = 4096
DEFAULT_BACKGROUND_WEIGHT = 0.3


def apply_background_proportion(image: torch.Tensor, amodal: torch.Tensor, weight: float) -> torch.Tensor:
    """Keep the figure region, scale the background by ``weight``.

    weight 0 blacks out everything outside the full-body mask; weight 1
    keeps the scene untouched; the 0.3 default keeps a faint context cue.
    """
    if not (0.0 <= float(weight) <= 1.0):
        raise ConfigError(f"background weight must be in [0, 1], got {weight}")
    return image * (amodal + (1.0 - amodal) * float(weight))


def initial_validity(visible: torch.Tensor, amodal: torch.Tensor, weight: float) -> torch.Tensor:
    """Valid pixels for the partial convs: the visible figure, plus the
    background whenever any of it is kept (weight > 0)."""
    if float(weight) > 0.0:
        return (visible + (1.0 - amodal)).clamp(0.0, 1.0)
    return visible


def composite(recovered: torch.Tensor, occluded: torch.Tensor, visible: torch.Tensor) -> torch.Tensor:
    """Paste the recovery into the hidden region only; visible pixels pass
    through bit-exact."""
    return occluded * visible + recovered * (1.0 - visible)


def select_attention_scales(
    canvas: int, depth: int, max_cells: int = ATTENTION_MAX_CELLS
) -> tuple[int, ...]:
    """Decoder scales that get a guided-attention block.

    Candidates are the three coarsest decoder outputs; any whose H*W
    exceeds ``max_cells`` is dropped (the relation matrix is HW x HW).
    """
    decoder_sizes = [canvas // 2 ** (depth - 1 - i) for i in range(depth)]
    coarsest = decoder_sizes[:3]
    return tuple(s for s in coarsest if s * s <= max_cells)


class RecoveryNet(nn.Module):
    """Partial-conv UNet over the masked scene.

    Input is the background-attenuated image stacked with the visible and
    amodal masks. Skip connections concatenate encoder features; validity
    masks ride along every partial conv. Guided-attention blocks sit on the
    selected coarse decoder scales and see the parsing maps and visible
    mask resized to that scale.
    """

    def __init__(
        self,
        part_count: int,
        canvas: int = 64,
        widths: tuple[int, ...] = DEFAULT_WIDTHS,
        background_weight: float = DEFAULT_BACKGROUND_WEIGHT,
        key_dim: int = 16,
        assembly: str = "fusion",
        use_body: bool = True,
        use_relation: bool = True,
        attention_max_cells: int = ATTENTION_MAX_CELLS,
        init_seed: int = 0,
    ):
        super().__init__()
        if not (0.0 <= float(background_weight) <= 1.0):
            raise ConfigError(f"background weight must be in [0, 1], got {background_weight}")
        depth = len(widths)
        if canvas % (2 ** depth):
            raise ValueError(f"canvas {canvas} not divisible by 2**depth = {2 ** depth}")
        self.part_count = int(part_count)
        self.canvas = int(canvas)
        self.widths = tuple(int(w) for w in widths)
        self.background_weight = float(background_weight)
        self.init_seed = int(init_seed)

        in_ch = 3 + 2  # attenuated image + visible mask + amodal mask
        enc = []
        c_prev = in_ch
        for w in self.widths:
            enc.append(PartialConv2d(c_prev, w, kernel_size=3, stride=2, padding=1))
            c_prev = w
        self.encoder = nn.ModuleList(enc)

        dec = []
        for i in reversed(range(depth)):
            skip_ch = self.widths[i - 1] if i > 0 else in_ch
            out_ch = self.widths[i - 1] if i > 0 else self.widths[0]
            dec.append(PartialConv2d(self.widths[i] + skip_ch, out_ch,
                                     kernel_size=3, stride=1, padding=1))
        self.decoder = nn.ModuleList(dec)
        self.head = nn.Conv2d(self.widths[0], 3, kernel_size=1)
        self.act = nn.LeakyReLU(0.2)

        self.attention_scales = select_attention_scales(canvas, depth, attention_max_cells)
        blocks = {}
        for i in reversed(range(depth)):
            size = canvas // 2 ** i
            if size in self.attention_scales:
                ch = self.widths[i - 1] if i > 0 else self.widths[0]
                blocks[str(size)] = GuidedAttention(
                    ch, part_count, key_dim=key_dim, assembly=assembly,
                    use_body=use_body, use_relation=use_relation,
                )
        self.attention = nn.ModuleDict(blocks)
        seeded_uniform_init_(self, init_seed)

    def forward(
        self,
        occluded_image: torch.Tensor,
        visible_mask: torch.Tensor,
        amodal_mask: torch.Tensor,
        modal_parsing: torch.Tensor,
        amodal_parsing: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (recovered image in [0, 1], final validity mask)."""
        scene = apply_background_proportion(occluded_image, amodal_mask, self.background_weight)
        x = torch.cat([scene, visible_mask, amodal_mask], dim=1)
        m = initial_validity(visible_mask, amodal_mask, self.background_weight)

        skips = [(x, m)]
        y, my = x, m
        for conv in self.encoder:
            y, my = conv(y, my)
            y = self.act(y)
            skips.append((y, my))

        y, my = skips[-1]
        for i, conv in enumerate(self.decoder):
            y = F.interpolate(y, scale_factor=2, mode="nearest")
            my = F.interpolate(my, scale_factor=2, mode="nearest")
            skip_y, skip_m = skips[len(self.decoder) - 1 - i]
            y = torch.cat([y, skip_y], dim=1)
            my = torch.maximum(my, skip_m)
            y, my = conv(y, my)
            y = self.act(y)
            key = str(y.shape[-1])
            if key in self.attention:
                size = y.shape[-2:]
                y = self.attention[key](
                    y,
                    F.interpolate(modal_parsing, size=size, mode="nearest"),
                    F.interpolate(amodal_parsing, size=size, mode="nearest"),
                    F.interpolate(visible_mask, size=size, mode="nearest"),
                )
        return torch.sigmoid(self.head(y)), my


def make_image_discriminator(init_seed: int = 2) -> PatchDiscriminator:
    """Patch critic over RGB images."""
    disc = PatchDiscriminator(in_channels=3)
    seeded_uniform_init_(disc, init_seed)
    return disc
