"""Evaluation: overlap metrics, reconstruction errors, feature-space
distribution distance, and the report object the CLI serializes."""

from __future__ import annotations

import dataclasses
import json
import os
import warnings

import numpy as np
import scipy.linalg
import torch
from PIL import Image

from .datagen import OcclusionSample
from .losses import FrozenEmbedding
from .pipeline import batch_from_samples, cascade_infer

FRECHET_RIDGE = 1e-6


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; two empty masks agree
    perfectly, so that case is defined as 1."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a_b = np.asarray(a) > 0.5
    b_b = np.asarray(b) > 0.5
    union = int((a_b | b_b).sum())
    if union == 0:
        return 1.0
    return float((a_b & b_b).sum() / union)


def iou_triplet(
    pred_modal: np.ndarray,
    pred_amodal: np.ndarray,
    true_modal: np.ndarray,
    true_amodal: np.ndarray,
) -> dict[str, float]:
    """IoU on the visible, full-body, and hidden regions.

    The hidden region on each side is its amodal mask minus its modal mask,
    so the score reflects both completion quality and refinement quality.
    """
    pred_inv = (np.asarray(pred_amodal) > 0.5) & ~(np.asarray(pred_modal) > 0.5)
    true_inv = (np.asarray(true_amodal) > 0.5) & ~(np.asarray(true_modal) > 0.5)
    return {
        "modal": iou(pred_modal, true_modal),
        "amodal": iou(pred_amodal, true_amodal),
        "invisible": iou(pred_inv, true_inv),
    }


def l1_error(pred: np.ndarray, target: np.ndarray, region: np.ndarray | None = None) -> float:
    """Mean absolute error, optionally restricted to a binary region.

    An empty region contributes no error (returns 0).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {target.shape}")
    diff = np.abs(pred - target)
    if region is None:
        return float(diff.mean())
    region = np.asarray(region) > 0.5
    if region.shape != pred.shape[-region.ndim:]:
        raise ValueError(f"region shape {region.shape} does not broadcast over {pred.shape}")
    count = int(region.sum()) * int(np.prod(pred.shape[:pred.ndim - region.ndim], dtype=np.int64))
    if count == 0:
        return 0.0
    return float(diff[..., region].sum() / count)


def frechet_distance(
    features_a: np.ndarray, features_b: np.ndarray, ridge: float = FRECHET_RIDGE
) -> float:
    """Gaussian Frechet distance between two feature sets (rows = samples).

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with covariances
    estimated with 1/(n-1) and a ridge*I stabilizer folded into both (so
    identical sets give exactly 0 and the matrix root is well posed).
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("feature sets must be 2-D (samples x dims)")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set to estimate a covariance")
    dim = a.shape[1]
    if a.shape[0] <= dim or b.shape[0] <= dim:
        warnings.warn(
            f"feature sets of {a.shape[0]} and {b.shape[0]} samples at dim {dim}; "
            "covariances are rank-deficient, distance is noisy",
            stacklevel=2,
        )
    if a.shape == b.shape and np.array_equal(a, b):
        return 0.0
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sig_a = np.cov(a, rowvar=False, ddof=1) + ridge * np.eye(dim)
    sig_b = np.cov(b, rowvar=False, ddof=1) + ridge * np.eye(dim)
    root = scipy.linalg.sqrtm(sig_a @ sig_b)
    if np.iscomplexobj(root):
        root = root.real
    mean_term = float(((mu_a - mu_b) ** 2).sum())
    value = mean_term + float(np.trace(sig_a) + np.trace(sig_b) - 2.0 * np.trace(root))
    # the true distance is nonnegative; tiny negatives are sqrtm noise
    return max(0.0, value)


@dataclasses.dataclass
class MetricReport:
    """Aggregate metrics plus the per-sample breakdown, JSON round-trippable."""

    metrics: dict[str, float]
    per_sample: list[dict[str, float]]
    count: int
    config_fingerprint: str
    notes: list[str]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())
            f.write("\n")

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        data = json.loads(text)
        return cls(
            metrics=dict(data["metrics"]),
            per_sample=list(data["per_sample"]),
            count=int(data["count"]),
            config_fingerprint=str(data["config_fingerprint"]),
            notes=list(data["notes"]),
        )

    @classmethod
    def load(cls, path: str) -> "MetricReport":
        with open(path) as f:
            return cls.from_json(f.read())


def _grid_panel(sample: OcclusionSample, result: dict, index: int) -> np.ndarray:
    """One qualitative strip: inputs, masks, prediction, ground truth."""
    def rgb(arr: np.ndarray) -> np.ndarray:
        a = np.asarray(arr)
        if a.ndim == 2:
            a = np.repeat(a[None], 3, axis=0)
        return np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)

    tiles = [
        rgb(sample.occluded_image),
        rgb(sample.initial_mask),
        rgb(result["modal"][index, 0].numpy()),
        rgb(result["amodal"][index, 0].numpy()),
        rgb(sample.amodal_mask),
    ]
    if "recovered" in result:
        tiles.append(rgb(result["recovered"][index].numpy()))
        tiles.append(rgb(result["composite"][index].numpy()))
    tiles.append(rgb(sample.full_image))
    return np.concatenate(tiles, axis=2)


def evaluate(
    samples: list[OcclusionSample],
    stage1,
    stage2=None,
    embedding: FrozenEmbedding | None = None,
    batch_size: int = 8,
    config_fingerprint: str = "",
    grids_dir: str | None = None,
    grids_count: int = 8,
) -> MetricReport:
    """Run the cascade over a dataset and aggregate metrics.

    Masks are scored with IoU (visible / full-body / hidden) and two l1
    flavors (full map, full-body region only). Images are scored with l1
    over the full map and over the true hidden region, for both the raw
    recovery and the composite. The feature-space distance compares the
    recovered set against the real set through the frozen embedding.
    """
    if not samples:
        raise ValueError("evaluate needs at least one sample")
    if embedding is None:
        embedding = FrozenEmbedding()
    stage1.eval()
    if stage2 is not None:
        stage2.eval()

    per_sample: list[dict[str, float]] = []
    real_feats: list[np.ndarray] = []
    fake_feats: list[np.ndarray] = []
    violations = 0
    total_pixels = 0
    panels: list[np.ndarray] = []

    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = batch_from_samples(chunk)
        result = cascade_infer(stage1, stage2, batch["occluded_image"], batch["initial_mask"])
        violations += int(result["nesting_violations"].item())
        total_pixels += int(np.prod(batch["initial_mask"].shape))
        if stage2 is not None:
            with torch.no_grad():
                fake_feats.append(embedding.pooled(result["recovered"]).numpy())
                real_feats.append(embedding.pooled(batch["full_image"]).numpy())
        for i, s in enumerate(chunk):
            pred_modal = result["modal"][i, 0].numpy()
            pred_amodal = result["amodal"][i, 0].numpy()
            row = dict(iou_triplet(pred_modal, pred_amodal, s.modal_mask, s.amodal_mask))
            row = {f"iou_{k}": v for k, v in row.items()}
            row["l1_mask_full"] = l1_error(pred_amodal, s.amodal_mask)
            row["l1_mask_amodal_region"] = l1_error(pred_amodal, s.amodal_mask,
                                                    region=s.amodal_mask)
            true_hidden = (s.amodal_mask > 0.5) & ~(s.modal_mask > 0.5)
            if stage2 is not None:
                rec = result["recovered"][i].numpy()
                comp = result["composite"][i].numpy()
                row["l1_image_full"] = l1_error(rec, s.full_image)
                row["l1_image_invisible"] = l1_error(rec, s.full_image, region=true_hidden)
                row["l1_composite_invisible"] = l1_error(comp, s.full_image, region=true_hidden)
            row["occlusion_ratio"] = float(s.occlusion_ratio)
            per_sample.append(row)
            if grids_dir is not None and len(panels) < grids_count:
                panels.append(_grid_panel(s, result, i))

    keys = sorted(k for k in per_sample[0] if k != "occlusion_ratio")
    metrics = {k: float(np.mean([row[k] for row in per_sample])) for k in keys}
    metrics["nesting_violation_rate"] = violations / max(total_pixels, 1)
    notes = [
        "feature-space distance uses the frozen random-weight embedding "
        f"(seed {embedding.seed}); values are self-consistent across runs of this "
        "package but not comparable with any published score"
    ]
    if stage2 is not None:
        fake = np.concatenate(fake_feats, axis=0)
        real = np.concatenate(real_feats, axis=0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            metrics["frechet"] = frechet_distance(fake, real)
        for wmsg in caught:
            notes.append(str(wmsg.message))

    if grids_dir is not None and panels:
        os.makedirs(grids_dir, exist_ok=True)
        for i, panel in enumerate(panels):
            Image.fromarray(panel.transpose(1, 2, 0)).save(
                os.path.join(grids_dir, f"sample_{i:03d}.png")
            )

    return MetricReport(
        metrics=metrics,
        per_sample=per_sample,
        count=len(samples),
        config_fingerprint=config_fingerprint,
        notes=notes,
    )
