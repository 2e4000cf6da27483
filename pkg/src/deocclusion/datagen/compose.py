"""Occlusion composition: ratio sampling, placement search, mask corruption."""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
from scipy import ndimage
from PIL import Image

from ..errors import DatasetError, PlacementError, SizingError
from .synth import MARGIN, MIN_CANVAS, HumanRecord, OccluderPatch, labels_to_onehot

PLACEMENT_STRIDE = 4
REFINE_RADIUS = 3
MAX_PLACEMENT_TRIALS = 2000
RATIO_TOLERANCE = 0.02


@dataclasses.dataclass
class OcclusionSample:
    """One training/eval record: the occluded scene plus full supervision."""

    occluded_image: np.ndarray  # (3, H, W) float32, figure partly covered
    full_image: np.ndarray  # (3, H, W) float32, figure unoccluded
    initial_mask: np.ndarray  # (H, W) corrupted visible-region mask (network input)
    modal_mask: np.ndarray  # (H, W) true visible-region mask
    amodal_mask: np.ndarray  # (H, W) full-body mask
    modal_parsing: np.ndarray  # (P, H, W) one-hot, parts clipped to the modal mask
    amodal_parsing: np.ndarray  # (P, H, W) one-hot over the full body
    occlusion_ratio: float
    seed: int
    part_count: int
    split: str = "train"


@dataclasses.dataclass(frozen=True)
class RatioDistribution:
    """Piecewise-uniform distribution over occlusion ratios.

    ``bins`` is a tuple of (low, high, probability). Bins must be disjoint,
    inside [0, 1), and their probabilities must sum to 1.
    """

    bins: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if not self.bins:
            raise ValueError("ratio distribution needs at least one bin")
        total = 0.0
        for low, high, p in self.bins:
            if not (0.0 <= low < high <= 1.0):
                raise ValueError(f"bad ratio bin [{low}, {high})")
            if p < 0.0:
                raise ValueError(f"negative bin probability {p}")
            total += p
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"bin probabilities sum to {total}, expected 1")
        ordered = sorted(self.bins)
        for (_, hi_a, _), (lo_b, _, _) in zip(ordered[:-1], ordered[1:]):
            if lo_b < hi_a:
                raise ValueError("ratio bins overlap")

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, _, p in self.bins], dtype=np.float64)


# training draws leave a deliberate gap at [0.2, 0.3)
TRAIN_RATIOS = RatioDistribution((
    (0.0, 0.1, 1.0 / 3.0),
    (0.1, 0.2, 1.0 / 3.0),
    (0.3, 0.4, 1.0 / 3.0),
))
# validation adds the heavier [0.4, 0.5) band, all bins equally likely
VAL_RATIOS = RatioDistribution((
    (0.0, 0.1, 0.25),
    (0.1, 0.2, 0.25),
    (0.3, 0.4, 0.25),
    (0.4, 0.5, 0.25),
))


def sample_ratio(distribution: RatioDistribution, rng_seed) -> float:
    """Draw one target ratio: pick a bin by probability, then uniform inside."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    idx = int(rng.choice(len(distribution.bins), p=distribution.probabilities))
    low, high, _ = distribution.bins[idx]
    return float(rng.uniform(low, high))


def occlusion_ratio(amodal: np.ndarray, modal: np.ndarray) -> float:
    """Fraction of the full body hidden: (|amodal| - |modal|) / |amodal|."""
    if amodal.shape != modal.shape:
        raise DatasetError(f"mask shapes differ: {amodal.shape} vs {modal.shape}")
    amodal_b = amodal > 0.5
    modal_b = modal > 0.5
    area = int(amodal_b.sum())
    if area == 0:
        raise DatasetError("amodal mask is empty; occlusion ratio undefined")
    if (modal_b & ~amodal_b).any():
        raise DatasetError("modal mask has pixels outside the amodal mask")
    return float((area - int(modal_b.sum())) / area)


def _placement_candidates(h, w, ph, pw, rng):
    """Stride-4 grid of top-left corners, phase-jittered, capped by budget."""
    stride = PLACEMENT_STRIDE
    refine_budget = (2 * REFINE_RADIUS + 1) ** 2
    while True:
        oy = int(rng.integers(0, min(stride, h - ph + 1)))
        ox = int(rng.integers(0, min(stride, w - pw + 1)))
        ys = np.arange(oy, h - ph + 1, stride)
        xs = np.arange(ox, w - pw + 1, stride)
        if ys.size * xs.size + refine_budget <= MAX_PLACEMENT_TRIALS:
            return ys, xs
        stride *= 2


def compose_occlusion(
    human: HumanRecord,
    occluder: OccluderPatch,
    target_ratio: float,
    rng_seed,
) -> OcclusionSample:
    """Paste the occluder so the achieved occlusion ratio hits the target.

    Deterministic search: scan a phase-jittered stride-4 grid of placements,
    keep the one whose achieved ratio is closest to the target, then refine
    over the +-3 pixel neighborhood. Total evaluations stay under the trial
    budget. If the best achievable ratio is off by more than the tolerance,
    a PlacementError asks the caller to resample the occluder.
    """
    if not (0.0 <= target_ratio < 1.0):
        raise ValueError(f"target ratio must be in [0, 1), got {target_ratio}")
    _, h, w = human.image.shape
    ph, pw = occluder.mask.shape
    if ph > h or pw > w:
        raise SizingError(f"occluder {ph}x{pw} does not fit canvas {h}x{w}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    amodal = human.amodal > 0.5
    area = float(amodal.sum())
    occ = occluder.mask > 0.5

    def achieved(y: int, x: int) -> float:
        return float((occ & amodal[y:y + ph, x:x + pw]).sum()) / area

    ys, xs = _placement_candidates(h, w, ph, pw, rng)
    best_y, best_x, best_err = 0, 0, np.inf
    for y in ys:
        for x in xs:
            err = abs(achieved(int(y), int(x)) - target_ratio)
            if err < best_err:
                best_y, best_x, best_err = int(y), int(x), err
    for dy in range(-REFINE_RADIUS, REFINE_RADIUS + 1):
        for dx in range(-REFINE_RADIUS, REFINE_RADIUS + 1):
            y, x = best_y + dy, best_x + dx
            if 0 <= y <= h - ph and 0 <= x <= w - pw:
                err = abs(achieved(y, x) - target_ratio)
                if err < best_err - 1e-12:
                    best_y, best_x, best_err = y, x, err
    if best_err > RATIO_TOLERANCE:
        raise PlacementError(
            f"no placement within {RATIO_TOLERANCE} of target {target_ratio:.4f} "
            f"(best error {best_err:.4f}); resample the occluder"
        )

    occ_canvas = np.zeros((h, w), dtype=np.float32)
    occ_canvas[best_y:best_y + ph, best_x:best_x + pw] = occluder.mask
    occluded = human.image.copy()
    window = occluded[:, best_y:best_y + ph, best_x:best_x + pw]
    occluded[:, best_y:best_y + ph, best_x:best_x + pw] = (
        occluder.image * occluder.mask + window * (1.0 - occluder.mask)
    )

    modal = (human.amodal * (1.0 - occ_canvas)).astype(np.float32)
    modal_parsing = human.parsing.copy()
    modal_parsing[1:] *= modal[None]
    modal_parsing[0] = 1.0 - modal_parsing[1:].sum(axis=0)

    ratio = occlusion_ratio(human.amodal, modal)
    return OcclusionSample(
        occluded_image=occluded.astype(np.float32),
        full_image=human.image.copy(),
        initial_mask=modal.copy(),
        modal_mask=modal,
        amodal_mask=human.amodal.copy(),
        modal_parsing=modal_parsing.astype(np.float32),
        amodal_parsing=human.parsing.copy(),
        occlusion_ratio=ratio,
        seed=int(rng_seed) if isinstance(rng_seed, (int, np.integer)) else -1,
        part_count=human.part_count,
    )


def corrupt_modal_mask(mask: np.ndarray, severity: float, rng_seed) -> np.ndarray:
    """Degrade a clean visible-region mask into a plausible rough estimate.

    Three seeded distortions scale with severity: one erosion/dilation pass
    with a growing kernel, boundary flips, and elliptical hole punches. The
    constants are calibrated so severity 0.3 lands around IoU 0.7-0.85
    against the input, decreasing in expectation as severity rises.
    """
    if not (0.0 <= severity <= 1.0):
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    out = (mask > 0.5).astype(bool)
    if severity == 0.0:
        return out.astype(np.float32)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    if rng.random() < min(1.0, 0.35 + 0.65 * severity):
        if severity < 0.45:
            k = 3
        elif severity < 0.75:
            k = int(rng.choice([3, 5]))
        else:
            k = int(rng.choice([3, 5, 7]))
        op = ndimage.binary_erosion if rng.random() < 0.5 else ndimage.binary_dilation
        out = op(out, structure=np.ones((k, k), dtype=bool))

    band = ndimage.binary_dilation(out) & ~ndimage.binary_erosion(out)
    flips = band & (rng.random(out.shape) < 0.45 * severity)
    out = out ^ flips

    n_holes = int(rng.integers(0, min(3, round(3 * severity)) + 1))
    yy, xx = np.mgrid[0:out.shape[0], 0:out.shape[1]].astype(np.float64)
    for _ in range(n_holes):
        fg = np.argwhere(out)
        if fg.size == 0:
            break
        cy, cx = fg[int(rng.integers(len(fg)))]
        ry = (1.5 + 4.0 * severity) * rng.uniform(0.6, 1.0)
        rx = (1.5 + 4.0 * severity) * rng.uniform(0.6, 1.0)
        hole = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        out = out & ~hole
    return out.astype(np.float32)


def ingest_external(
    image: np.ndarray,
    mask: np.ndarray,
    parsing: np.ndarray | None = None,
    size: tuple[int, int] = (64, 64),
    part_count: int = 7,
) -> HumanRecord:
    """Adapt a user-supplied (image, mask[, label map]) pair to a HumanRecord.

    The pair is validated, rescaled to fit inside the canvas margin, and
    centered. Without a label map the whole figure becomes part 1.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise DatasetError(f"image must be (3, H, W), got {image.shape}")
    if mask.shape != image.shape[1:]:
        raise DatasetError(f"mask shape {mask.shape} does not match image {image.shape[1:]}")
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise DatasetError(f"mask must be binary 0/1, found values {values[:8]}")
    if mask.sum() == 0:
        raise DatasetError("mask is empty; nothing to ingest")
    if mask.min() >= 1:
        warnings.warn("mask covers the whole frame; no background remains", stacklevel=2)
    if parsing is not None:
        if parsing.shape != mask.shape:
            raise DatasetError(f"label map shape {parsing.shape} does not match mask {mask.shape}")
        if parsing.max() >= part_count:
            raise DatasetError(
                f"label map uses id {int(parsing.max())} but part_count is {part_count}"
            )
        if ((parsing > 0) != (mask > 0)).any():
            raise DatasetError("label map foreground must match the mask exactly")

    h, w = int(size[0]), int(size[1])
    if h < MIN_CANVAS or w < MIN_CANVAS:
        raise SizingError(f"canvas {h}x{w} too small (minimum {MIN_CANVAS})")
    box_h, box_w = h - 2 * (MARGIN + 1), w - 2 * (MARGIN + 1)
    src_h, src_w = mask.shape
    scale = min(box_h / src_h, box_w / src_w, 1.0)
    new_h, new_w = max(1, int(src_h * scale)), max(1, int(src_w * scale))

    def _resize(arr: np.ndarray, resample) -> np.ndarray:
        return np.asarray(
            Image.fromarray(arr).resize((new_w, new_h), resample=resample)
        )

    img_u8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    img_small = _resize(img_u8, Image.BILINEAR).astype(np.float32).transpose(2, 0, 1) / 255.0
    mask_small = _resize(mask.astype(np.uint8), Image.NEAREST).astype(np.float32)
    labels_src = parsing if parsing is not None else (mask > 0).astype(np.uint8)
    labels_small = _resize(labels_src.astype(np.uint8), Image.NEAREST)

    y0 = (h - new_h) // 2
    x0 = (w - new_w) // 2
    canvas_img = np.zeros((3, h, w), dtype=np.float32)
    canvas_img[:, y0:y0 + new_h, x0:x0 + new_w] = img_small
    canvas_mask = np.zeros((h, w), dtype=np.float32)
    canvas_mask[y0:y0 + new_h, x0:x0 + new_w] = mask_small
    canvas_labels = np.zeros((h, w), dtype=np.uint8)
    canvas_labels[y0:y0 + new_h, x0:x0 + new_w] = labels_small
    canvas_labels[canvas_mask == 0] = 0

    return HumanRecord(
        image=canvas_img,
        amodal=canvas_mask,
        parsing=labels_to_onehot(canvas_labels, part_count),
        part_count=int(part_count),
        seed=-1,
    )
