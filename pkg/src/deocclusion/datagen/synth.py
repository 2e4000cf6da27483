"""Procedural humans and occluders.

Figures are assembled from six primitives (head, torso, two arms, two legs)
rasterized as ellipses and capsules, textured with flat colors plus noise.
Everything is drawn from a single per-call generator so a (seed, size,
part_count) triple is a complete recipe for the output.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from ..errors import SizingError

MARGIN = 5  # empty border guaranteed around every figure, in pixels
MIN_CANVAS = 32
MIN_OCCLUDER = 8

# native primitive label ids (0 is background)
HEAD, TORSO, LEFT_ARM, RIGHT_ARM, LEFT_LEG, RIGHT_LEG = 1, 2, 3, 4, 5, 6
NATIVE_PARTS = 6


@dataclasses.dataclass
class HumanRecord:
    """An un-occluded figure: appearance, full-body mask, part map."""

    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    amodal: np.ndarray  # (H, W) float32 in {0, 1}
    parsing: np.ndarray  # (P, H, W) float32 one-hot, channel 0 = background
    part_count: int
    seed: int


@dataclasses.dataclass
class OccluderPatch:
    """A textured blob on its own small canvas."""

    image: np.ndarray  # (3, h, w) float32 in [0, 1]
    mask: np.ndarray  # (h, w) float32 in {0, 1}
    seed: int


def _ellipse(h: int, w: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ((yy - cy) / max(ry, 1e-6)) ** 2 + ((xx - cx) / max(rx, 1e-6)) ** 2 <= 1.0


def _capsule(h: int, w: int, p0, p1, radius: float) -> np.ndarray:
    """Pixels within ``radius`` of the segment p0-p1 (points are (y, x))."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    (y0, x0), (y1, x1) = p0, p1
    vy, vx = y1 - y0, x1 - x0
    norm2 = vy * vy + vx * vx
    if norm2 < 1e-12:
        t = np.zeros_like(yy)
    else:
        t = np.clip(((yy - y0) * vy + (xx - x0) * vx) / norm2, 0.0, 1.0)
    dy = yy - (y0 + t * vy)
    dx = xx - (x0 + t * vx)
    return dy * dy + dx * dx <= radius * radius


def _figure_primitives(rng: np.random.Generator) -> list[tuple[int, str, tuple]]:
    """Primitive list in paint order, in figure units (y down, x centered at 0).

    Proportions are loosely human: unit length is the full figure height.
    Returns (label, kind, params) with ellipse params (cy, cx, ry, rx) and
    capsule params (p0, p1, radius), p = (y, x).
    """
    u = rng.uniform
    head_cy = 0.105 + u(0.0, 0.015)
    head_ry = 0.09 * u(0.85, 1.08)
    head = (HEAD, "ellipse", (head_cy, u(-0.015, 0.015), head_ry, head_ry * u(0.72, 0.92)))
    torso = (TORSO, "capsule", ((0.235, 0.0), (0.535, u(-0.02, 0.02)), 0.125 * u(0.88, 1.08)))
    limbs = []
    for label, sign in ((LEFT_ARM, -1.0), (RIGHT_ARM, 1.0)):
        theta = u(0.18, 1.05)  # swing from vertical, radians
        length = u(0.26, 0.32)
        r = 0.045 * u(0.85, 1.15)
        p0 = (0.26, sign * 0.10)
        p1 = (0.26 + math.cos(theta) * length, sign * (0.10 + math.sin(theta) * length))
        limbs.append((label, "capsule", (p0, p1, r)))
    for label, sign in ((LEFT_LEG, -1.0), (RIGHT_LEG, 1.0)):
        phi = u(0.04, 0.34)
        length = u(0.33, 0.39)
        r = 0.055 * u(0.88, 1.10)
        p0 = (0.535, sign * 0.065)
        p1 = (0.535 + math.cos(phi) * length, sign * (0.065 + math.sin(phi) * length))
        limbs.append((label, "capsule", (p0, p1, r)))
    arms = [limbs[0], limbs[1]]
    legs = [limbs[2], limbs[3]]
    # paint order: legs first, torso over hips, arms over torso, head on top
    return legs + [torso] + arms + [head]


def _primitive_bounds(prims) -> tuple[float, float, float, float]:
    ymin = xmin = math.inf
    ymax = xmax = -math.inf
    for _, kind, params in prims:
        if kind == "ellipse":
            cy, cx, ry, rx = params
            ymin, ymax = min(ymin, cy - ry), max(ymax, cy + ry)
            xmin, xmax = min(xmin, cx - rx), max(xmax, cx + rx)
        else:
            (y0, x0), (y1, x1), r = params
            ymin, ymax = min(ymin, y0 - r, y1 - r), max(ymax, y0 + r, y1 + r)
            xmin, xmax = min(xmin, x0 - r, x1 - r), max(xmax, x0 + r, x1 + r)
    return ymin, ymax, xmin, xmax


def _split_allocation(part_count: int) -> list[int]:
    """How many final labels each native primitive contributes (P-1 > 6)."""
    alloc = [1] * NATIVE_PARTS
    for i in range(part_count - 1 - NATIVE_PARTS):
        alloc[i % NATIVE_PARTS] += 1
    return alloc


def _regroup_labels(native: np.ndarray, part_count: int) -> np.ndarray:
    """Map the 6 native labels onto part_count-1 final labels.

    Fewer final parts: merge round-robin. More: split each native part into
    equal-population chunks along its longer axis (stable order, so the
    result is deterministic).
    """
    fg = part_count - 1
    if fg == NATIVE_PARTS:
        return native.copy()
    out = np.zeros_like(native)
    if fg < NATIVE_PARTS:
        mask = native > 0
        out[mask] = (native[mask] - 1) % fg + 1
        return out
    alloc = _split_allocation(part_count)
    next_label = 1
    for nat in range(1, NATIVE_PARTS + 1):
        n_chunks = alloc[nat - 1]
        ys, xs = np.nonzero(native == nat)
        if n_chunks == 1 or ys.size == 0:
            out[ys, xs] = next_label
            next_label += n_chunks
            continue
        span_y = ys.max() - ys.min() if ys.size else 0
        span_x = xs.max() - xs.min() if xs.size else 0
        axis = ys if span_y >= span_x else xs
        order = np.argsort(axis, kind="stable")
        for j, chunk in enumerate(np.array_split(order, n_chunks)):
            out[ys[chunk], xs[chunk]] = next_label + j
        next_label += n_chunks
    return out


def labels_to_onehot(labels: np.ndarray, part_count: int) -> np.ndarray:
    """(H, W) integer labels in [0, P-1] to a (P, H, W) one-hot float map."""
    if labels.min() < 0 or labels.max() >= part_count:
        raise ValueError(
            f"labels out of range [0, {part_count - 1}]: "
            f"found [{labels.min()}, {labels.max()}]"
        )
    onehot = np.zeros((part_count,) + labels.shape, dtype=np.float32)
    np.put_along_axis(onehot, labels[None].astype(np.int64), 1.0, axis=0)
    return onehot


def generate_human(seed: int, size: tuple[int, int] = (64, 64), part_count: int = 7) -> HumanRecord:
    """Draw one figure fully inside ``size`` with a MARGIN-pixel empty border."""
    h, w = int(size[0]), int(size[1])
    if h < MIN_CANVAS or w < MIN_CANVAS:
        raise SizingError(f"canvas {h}x{w} too small to place a figure (minimum {MIN_CANVAS})")
    if part_count < 2:
        raise ValueError(f"part_count must be >= 2 (background + parts), got {part_count}")
    rng = np.random.default_rng([int(seed), 0x48554D])
    prims = _figure_primitives(rng)
    ymin, ymax, xmin, xmax = _primitive_bounds(prims)

    box_h = h - 2 * (MARGIN + 1)
    box_w = w - 2 * (MARGIN + 1)
    scale = box_h / (ymax - ymin) * rng.uniform(0.84, 0.98)
    scale = min(scale, box_w / (xmax - xmin))
    fig_h = (ymax - ymin) * scale
    fig_w = (xmax - xmin) * scale
    ay = MARGIN + 1 - ymin * scale + rng.uniform(0.0, max(0.0, box_h - fig_h))
    ax = MARGIN + 1 - xmin * scale + rng.uniform(0.0, max(0.0, box_w - fig_w))

    native = np.zeros((h, w), dtype=np.uint8)
    for label, kind, params in prims:
        if kind == "ellipse":
            cy, cx, ry, rx = params
            m = _ellipse(h, w, ay + cy * scale, ax + cx * scale, ry * scale, rx * scale)
        else:
            (y0, x0), (y1, x1), r = params
            m = _capsule(
                h, w,
                (ay + y0 * scale, ax + x0 * scale),
                (ay + y1 * scale, ax + x1 * scale),
                r * scale,
            )
        native[m] = label

    amodal = (native > 0).astype(np.float32)
    border = np.ones((h, w), dtype=bool)
    border[MARGIN:h - MARGIN, MARGIN:w - MARGIN] = False
    if (amodal[border] > 0).any():
        raise SizingError(f"figure escaped the {MARGIN}-pixel margin at canvas {h}x{w}")

    labels = _regroup_labels(native, part_count)
    parsing = labels_to_onehot(labels, part_count)

    bg = rng.uniform(0.03, 0.25, size=3).astype(np.float32)
    image = bg[:, None, None] + rng.uniform(-0.03, 0.03, size=(3, h, w)).astype(np.float32)
    for nat in range(1, NATIVE_PARTS + 1):
        color = rng.uniform(0.30, 0.95, size=3).astype(np.float32)
        region = native == nat
        if not region.any():
            continue
        noise = rng.uniform(-0.05, 0.05, size=(3, int(region.sum()))).astype(np.float32)
        image[:, region] = color[:, None] + noise
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return HumanRecord(image=image, amodal=amodal, parsing=parsing,
                       part_count=int(part_count), seed=int(seed))


def generate_occluder(seed: int, max_size: tuple[int, int] = (32, 32)) -> OccluderPatch:
    """A textured blob: union of a few seeded ellipses on its own patch."""
    max_h, max_w = int(max_size[0]), int(max_size[1])
    if max_h < MIN_OCCLUDER or max_w < MIN_OCCLUDER:
        raise SizingError(f"occluder bound {max_h}x{max_w} below minimum {MIN_OCCLUDER}")
    rng = np.random.default_rng([int(seed), 0x4F4343])
    h = int(rng.integers(MIN_OCCLUDER, max_h + 1))
    w = int(rng.integers(MIN_OCCLUDER, max_w + 1))
    # central ellipse guarantees a non-empty mask; extras roughen the outline
    mask = _ellipse(h, w, h / 2.0, w / 2.0, h * rng.uniform(0.30, 0.44), w * rng.uniform(0.30, 0.44))
    for _ in range(int(rng.integers(1, 4))):
        cy = rng.uniform(0.28, 0.72) * h
        cx = rng.uniform(0.28, 0.72) * w
        mask |= _ellipse(h, w, cy, cx, h * rng.uniform(0.14, 0.34), w * rng.uniform(0.14, 0.34))
    mask_f = mask.astype(np.float32)

    color = rng.uniform(0.15, 0.95, size=3).astype(np.float32)
    grad = np.linspace(-0.08, 0.08, w, dtype=np.float32)[None, None, :]
    image = color[:, None, None] + grad + rng.uniform(-0.06, 0.06, size=(3, h, w)).astype(np.float32)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return OccluderPatch(image=image, mask=mask_f, seed=int(seed))
