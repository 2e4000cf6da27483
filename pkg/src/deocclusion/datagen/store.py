"""Dataset persistence and seeded corpus construction.

Layout: one directory per sample plus a root manifest. Images round-trip
through 8-bit PNG (within 1/255 of the float originals); masks and label
maps are bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from ..errors import DatasetError, PlacementError
from .compose import (
    OcclusionSample,
    RatioDistribution,
    TRAIN_RATIOS,
    compose_occlusion,
    corrupt_modal_mask,
    sample_ratio,
)
from .synth import generate_human, generate_occluder, labels_to_onehot

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")

# rng stream tags so every random decision has its own derived generator
_STREAM_HUMAN = 0
_STREAM_OCCLUDER = 1
_STREAM_RATIO = 2
_STREAM_PLACE = 3
_STREAM_CORRUPT = 4

_OCCLUDER_RETRIES = 25


def sample_seed(master_seed: int, index: int, stream: int, attempt: int = 0) -> np.random.SeedSequence:
    """Independent, order-free seed for one decision of one sample."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index), int(stream), int(attempt)))


def _to_png_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _save_image(path: str, img: np.ndarray) -> None:
    Image.fromarray(_to_png_u8(img).transpose(1, 2, 0)).save(path)


def _save_mask(path: str, mask: np.ndarray) -> None:
    Image.fromarray((mask > 0.5).astype(np.uint8) * 255).save(path)


def _save_labels(path: str, parsing: np.ndarray) -> None:
    labels = np.argmax(parsing, axis=0).astype(np.uint8)
    Image.fromarray(labels).save(path)


def _load_image(path: str) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return (arr / 255.0).transpose(2, 0, 1)


def _load_mask(path: str) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.float32)


def _load_labels(path: str, part_count: int) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return labels_to_onehot(arr.astype(np.int64), part_count)


_SAMPLE_FILES = {
    "occluded.png": ("occluded_image", _save_image, _load_image),
    "full.png": ("full_image", _save_image, _load_image),
    "mask_initial.png": ("initial_mask", _save_mask, _load_mask),
    "mask_modal.png": ("modal_mask", _save_mask, _load_mask),
    "mask_amodal.png": ("amodal_mask", _save_mask, _load_mask),
    "parsing_modal.png": ("modal_parsing", _save_labels, None),
    "parsing_amodal.png": ("amodal_parsing", _save_labels, None),
}


def save_dataset(
    samples: list[OcclusionSample],
    root: str,
    master_seed: int | None = None,
    overwrite: bool = False,
) -> dict:
    """Write samples plus a manifest under ``root``; returns the manifest."""
    if not samples:
        raise DatasetError("refusing to save an empty dataset")
    manifest_path = os.path.join(root, "manifest.json")
    if os.path.exists(manifest_path) and not overwrite:
        raise DatasetError(f"dataset already exists at {root} (pass overwrite to replace)")
    os.makedirs(root, exist_ok=True)

    part_count = samples[0].part_count
    canvas = list(samples[0].amodal_mask.shape)
    split = samples[0].split
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}, expected one of {SPLITS}")
    dirs = []
    for i, s in enumerate(samples):
        if s.part_count != part_count or list(s.amodal_mask.shape) != canvas:
            raise DatasetError(f"sample {i} disagrees with the dataset canvas/part_count")
        name = f"{i:06d}"
        sdir = os.path.join(root, name)
        os.makedirs(sdir, exist_ok=True)
        for fname, (attr, saver, _) in _SAMPLE_FILES.items():
            saver(os.path.join(sdir, fname), getattr(s, attr))
        with open(os.path.join(sdir, "sample.json"), "w") as f:
            json.dump(
                {
                    "seed": s.seed,
                    "occlusion_ratio": s.occlusion_ratio,
                    "part_count": s.part_count,
                    "split": s.split,
                },
                f,
                sort_keys=True,
                indent=2,
            )
        dirs.append(name)

    manifest = {
        "format_version": FORMAT_VERSION,
        "split": split,
        "canvas": canvas,
        "part_count": part_count,
        "master_seed": master_seed,
        "count": len(samples),
        "sample_dirs": dirs,
    }
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
    return manifest


def load_dataset(root: str) -> tuple[list[OcclusionSample], dict]:
    """Read a dataset directory back into memory, validating as it goes."""
    manifest_path = os.path.join(root, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise DatasetError(f"no manifest.json under {root}")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest.json is not valid JSON: {e}") from e
    for key in ("format_version", "split", "canvas", "part_count", "count", "sample_dirs"):
        if key not in manifest:
            raise DatasetError(f"manifest missing key {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format_version {manifest['format_version']}")
    if manifest["split"] not in SPLITS:
        raise DatasetError(f"manifest split {manifest['split']!r} not one of {SPLITS}")
    if len(manifest["sample_dirs"]) != manifest["count"]:
        raise DatasetError("manifest count disagrees with sample_dirs")

    part_count = int(manifest["part_count"])
    canvas = tuple(manifest["canvas"])
    samples = []
    for name in manifest["sample_dirs"]:
        sdir = os.path.join(root, name)
        meta_path = os.path.join(sdir, "sample.json")
        if not os.path.isfile(meta_path):
            raise DatasetError(f"sample {name} is missing sample.json")
        with open(meta_path) as f:
            meta = json.load(f)
        fields = {}
        for fname, (attr, _, loader) in _SAMPLE_FILES.items():
            fpath = os.path.join(sdir, fname)
            if not os.path.isfile(fpath):
                raise DatasetError(f"sample {name} is missing {fname}")
            if loader is None:
                fields[attr] = _load_labels(fpath, part_count)
            else:
                fields[attr] = loader(fpath)
            got = fields[attr].shape[-2:]
            if tuple(got) != canvas:
                raise DatasetError(f"sample {name}/{fname} has size {got}, manifest says {canvas}")
        samples.append(
            OcclusionSample(
                occlusion_ratio=float(meta["occlusion_ratio"]),
                seed=int(meta["seed"]),
                part_count=int(meta["part_count"]),
                split=str(meta["split"]),
                **fields,
            )
        )
    return samples, manifest


def build_dataset(
    master_seed: int,
    human_count: int,
    occluders_per_human: int = 1,
    distribution: RatioDistribution = TRAIN_RATIOS,
    size: tuple[int, int] = (64, 64),
    part_count: int = 7,
    corrupt_severity: float = 0.3,
    split: str = "train",
    occluder_max: tuple[int, int] | None = None,
) -> list[OcclusionSample]:
    """Synthesize human_count x occluders_per_human samples, deterministically.

    Every random decision for sample k draws from a generator derived from
    (master_seed, k, stream), so any sample can be rebuilt in isolation and
    the corpus does not depend on generation order. Placement failures
    resample the occluder with a bumped attempt tag.
    """
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}, expected one of {SPLITS}")
    if occluder_max is None:
        # large enough to reach the heaviest default ratio bin on most figures
        occluder_max = (max(16, int(size[0] * 0.62)), max(16, int(size[1] * 0.62)))
    samples = []
    for hi in range(human_count):
        human = generate_human(
            np.random.default_rng(sample_seed(master_seed, hi, _STREAM_HUMAN)).integers(2**63),
            size=size,
            part_count=part_count,
        )
        for oi in range(occluders_per_human):
            k = hi * occluders_per_human + oi
            ratio_rng = np.random.default_rng(sample_seed(master_seed, k, _STREAM_RATIO))
            target = sample_ratio(distribution, ratio_rng)
            sample = None
            for attempt in range(_OCCLUDER_RETRIES):
                occ_seed = np.random.default_rng(
                    sample_seed(master_seed, k, _STREAM_OCCLUDER, attempt)
                ).integers(2**63)
                occluder = generate_occluder(int(occ_seed), max_size=occluder_max)
                place_rng = np.random.default_rng(sample_seed(master_seed, k, _STREAM_PLACE, attempt))
                try:
                    sample = compose_occlusion(human, occluder, target, place_rng)
                except PlacementError:
                    continue
                break
            if sample is None:
                raise PlacementError(
                    f"sample {k}: no occluder reached ratio {target:.3f} "
                    f"after {_OCCLUDER_RETRIES} attempts"
                )
            corrupt_rng = np.random.default_rng(sample_seed(master_seed, k, _STREAM_CORRUPT))
            sample.initial_mask = corrupt_modal_mask(sample.modal_mask, corrupt_severity, corrupt_rng)
            sample.seed = k
            sample.split = split
            samples.append(sample)
    return samples
