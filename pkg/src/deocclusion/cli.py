"""Command-line interface.

Subcommands: synth, train-mask, train-recover, eval, infer, ablate.
Exit codes: 0 success, 1 validation/configuration error, 2 runtime failure.
The run directory can also come from the DEOCCLUSION_RUN_DIR environment
variable; explicit --out wins.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import RUN_DIR_ENV, TrainConfig, load_config, run_dir
from .datagen import (
    RatioDistribution,
    TRAIN_RATIOS,
    VAL_RATIOS,
    build_dataset,
    load_dataset,
    save_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    PlacementError,
    SizingError,
)
from .evalkit import MetricReport, evaluate, frechet_distance, l1_error
from .losses import FrozenEmbedding


def _parse_distribution(text: str) -> RatioDistribution:
    if text == "train":
        return TRAIN_RATIOS
    if text == "val":
        return VAL_RATIOS
    bins = []
    for piece in text.split(","):
        parts = piece.split(":")
        if len(parts) != 3:
            raise ConfigError(f"distribution bin must be low:high:prob, got {piece!r}")
        bins.append((float(parts[0]), float(parts[1]), float(parts[2])))
    try:
        return RatioDistribution(tuple(bins))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _write_json(path: str, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def _config_from_args(args, stage: str) -> TrainConfig:
    return load_config(path=args.config, overrides=args.set, stage=stage)


def cmd_synth(args) -> int:
    out = run_dir(args.out, "runs/synth")
    distribution = _parse_distribution(args.distribution)
    humans = args.humans if args.humans is not None else args.count
    per = args.per_human
    samples = build_dataset(
        master_seed=args.master_seed,
        human_count=humans,
        occluders_per_human=per,
        distribution=distribution,
        size=(args.canvas, args.canvas),
        part_count=args.part_count,
        corrupt_severity=args.severity,
        split=args.split,
    )
    manifest = save_dataset(samples, out, master_seed=args.master_seed, overwrite=args.overwrite)

    ratios = np.array([s.occlusion_ratio for s in samples])
    edges = np.arange(0.0, 1.0001, 0.05)
    counts, _ = np.histogram(ratios, bins=edges)
    report = {
        "count": len(samples),
        "split": args.split,
        "master_seed": args.master_seed,
        "ratio_mean": float(ratios.mean()),
        "ratio_histogram": {
            f"{lo:.2f}-{hi:.2f}": int(c) for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        },
        "distribution": [list(b) for b in distribution.bins],
    }
    _write_json(os.path.join(out, "report.json"), report)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.hist(ratios, bins=edges, color="#4878a8", edgecolor="white")
    for low, high, _ in distribution.bins:
        ax.axvline(low, color="#c44e52", linewidth=0.8, linestyle="--")
        ax.axvline(high, color="#c44e52", linewidth=0.8, linestyle="--")
    ax.set_xlabel("occlusion ratio")
    ax.set_ylabel("samples")
    ax.set_title(f"{len(samples)} samples, split {args.split}")
    fig.tight_layout()
    fig.savefig(os.path.join(out, "ratio_hist.png"), dpi=120)
    plt.close(fig)

    print(f"wrote {len(samples)} samples to {out} "
          f"(manifest count {manifest['count']}, mean ratio {report['ratio_mean']:.3f})")
    return 0


def cmd_train_mask(args) -> int:
    from .train import save_stage1, train_stage1

    config = _config_from_args(args, stage="mask")
    samples, _ = load_dataset(args.data)
    out = run_dir(args.out, "runs/train-mask")
    os.makedirs(out, exist_ok=True)
    result = train_stage1(config, samples, log=print)
    ckpt = os.path.join(out, "checkpoint.ckpt")
    save_stage1(ckpt, result, config)
    _write_json(os.path.join(out, "history.json"), {
        "history": result.history,
        "stopped_iteration": result.stopped_iteration,
        "config_fingerprint": config.fingerprint(),
    })
    print(f"saved {ckpt} (stopped at iteration {result.stopped_iteration})")
    return 0


def cmd_train_recover(args) -> int:
    from .train import save_stage2, train_stage2

    config = _config_from_args(args, stage="recover")
    samples, _ = load_dataset(args.data)
    out = run_dir(args.out, "runs/train-recover")
    os.makedirs(out, exist_ok=True)
    result = train_stage2(config, samples, log=print)
    ckpt = os.path.join(out, "checkpoint.ckpt")
    save_stage2(ckpt, result, config)
    _write_json(os.path.join(out, "history.json"), {
        "history": result.history,
        "stopped_iteration": result.stopped_iteration,
        "config_fingerprint": config.fingerprint(),
    })
    print(f"saved {ckpt} (stopped at iteration {result.stopped_iteration})")
    return 0


def cmd_eval(args) -> int:
    from .train import load_stage1, load_stage2

    samples, _ = load_dataset(args.data)
    stage1, _, _, meta1 = load_stage1(args.stage1)
    stage2 = None
    embedding_seed = 0
    if args.stage2:
        stage2, _, meta2 = load_stage2(args.stage2)
        embedding_seed = int(meta2.get("embedding_seed", 0))
    out = run_dir(args.out, "runs/eval")
    os.makedirs(out, exist_ok=True)
    grids_dir = os.path.join(out, "grids") if args.grids > 0 else None
    report = evaluate(
        samples,
        stage1,
        stage2,
        embedding=FrozenEmbedding(embedding_seed),
        config_fingerprint=str(meta1.get("config_fingerprint", "")),
        grids_dir=grids_dir,
        grids_count=args.grids,
    )
    report.save(os.path.join(out, "report.json"))
    for key in sorted(report.metrics):
        print(f"{key}: {report.metrics[key]:.6f}")
    print(f"report written to {os.path.join(out, 'report.json')}")
    return 0


def _load_sample_inputs(args):
    import torch
    from PIL import Image

    if args.sample:
        img_path = os.path.join(args.sample, "occluded.png")
        mask_path = os.path.join(args.sample, "mask_initial.png")
    else:
        img_path, mask_path = args.image, args.mask
    if not os.path.isfile(img_path) or not os.path.isfile(mask_path):
        raise DatasetError(f"missing input files: {img_path}, {mask_path}")
    image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
    mask = (np.asarray(Image.open(mask_path).convert("L")) > 127).astype(np.float32)
    if image.shape[:2] != mask.shape:
        raise DatasetError(f"image {image.shape[:2]} and mask {mask.shape} sizes differ")
    x = torch.from_numpy(image.transpose(2, 0, 1)).unsqueeze(0)
    m = torch.from_numpy(mask).unsqueeze(0).unsqueeze(0)
    return x, m


def cmd_infer(args) -> int:
    from PIL import Image

    from .pipeline import cascade_infer
    from .train import load_stage1, load_stage2

    stage1, _, _, _ = load_stage1(args.stage1)
    stage2 = None
    if args.stage2:
        stage2, _, meta2 = load_stage2(args.stage2)
    image, initial = _load_sample_inputs(args)
    if stage2 is not None and image.shape[-1] != stage2.canvas:
        raise DatasetError(
            f"input size {image.shape[-1]} does not match the recovery canvas {stage2.canvas}"
        )
    result = cascade_infer(stage1, stage2, image, initial)
    out = run_dir(args.out, "runs/infer")
    os.makedirs(out, exist_ok=True)

    def save_map(name: str, arr) -> None:
        a = arr.squeeze(0).numpy()
        if a.ndim == 3 and a.shape[0] == 3:
            u8 = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        else:
            u8 = (np.squeeze(a) > 0.5).astype(np.uint8) * 255
        Image.fromarray(u8).save(os.path.join(out, name))

    save_map("mask_modal.png", result["modal"])
    save_map("mask_amodal.png", result["amodal"])
    save_map("mask_invisible.png", result["invisible"])
    if stage2 is not None:
        save_map("recovered.png", result["recovered"])
        save_map("composite.png", result["composite"])
    amodal_area = float(result["amodal"].sum().item())
    modal_area = float(result["modal"].sum().item())
    summary = {
        "nesting_violations": int(result["nesting_violations"].item()),
        "amodal_area": amodal_area,
        "modal_area": modal_area,
        "occlusion_ratio_estimate": (
            (amodal_area - modal_area) / amodal_area if amodal_area > 0 else None
        ),
    }
    _write_json(os.path.join(out, "result.json"), summary)
    print(f"inference written to {out}")
    return 0


def cmd_ablate(args) -> int:
    import torch

    from .pipeline import batch_from_samples
    from .train import stage2_train_metrics, train_stage2

    base = _config_from_args(args, stage="recover")
    samples, _ = load_dataset(args.data)
    eval_samples = samples
    if args.eval_data:
        eval_samples, _ = load_dataset(args.eval_data)
    out = run_dir(args.out, "runs/ablate")
    os.makedirs(out, exist_ok=True)

    if args.axis == "background_weight":
        raw = args.values or "0.0,0.3,1.0"
        variants = [("background_weight", float(v)) for v in raw.split(",")]
    elif args.axis == "assembly":
        raw = args.values or "fusion,cascade"
        variants = [("pga_assembly", v.strip()) for v in raw.split(",")]
    elif args.axis == "streams":
        raw = args.values or "both,body,relation,none"
        mapping = {
            "both": (True, True), "body": (True, False),
            "relation": (False, True), "none": (False, False),
        }
        variants = []
        for v in raw.split(","):
            if v.strip() not in mapping:
                raise ConfigError(f"streams value must be one of {sorted(mapping)}, got {v!r}")
            variants.append(("streams", v.strip()))
    else:
        raise ConfigError(f"unknown ablation axis {args.axis!r}")

    embedding = FrozenEmbedding(base.embedding_seed)
    eval_tensors = batch_from_samples(eval_samples)
    rows = []
    for field, value in variants:
        if field == "streams":
            body, relation = {
                "both": (True, True), "body": (True, False),
                "relation": (False, True), "none": (False, False),
            }[value]
            config = dataclasses.replace(base, pga_body=body, pga_relation=relation)
        else:
            config = dataclasses.replace(base, **{field: value})
        result = train_stage2(config, samples, embedding=embedding)
        metrics = stage2_train_metrics(result.model, eval_tensors)
        with torch.no_grad():
            recovered, _ = result.model(
                eval_tensors["occluded_image"], eval_tensors["modal_mask"],
                eval_tensors["amodal_mask"], eval_tensors["modal_parsing"],
                eval_tensors["amodal_parsing"],
            )
            l1_full = l1_error(recovered.numpy(), eval_tensors["full_image"].numpy())
            import warnings as _warnings
            with _warnings.catch_warnings():
                _warnings.simplefilter("ignore")
                fd = frechet_distance(
                    embedding.pooled(recovered).numpy(),
                    embedding.pooled(eval_tensors["full_image"]).numpy(),
                )
        rows.append({
            "variant": f"{args.axis}={value}",
            "l1_invisible": metrics["l1_invisible"],
            "l1_full": l1_full,
            "frechet": fd,
            "stopped_iteration": result.stopped_iteration,
        })

    _write_json(os.path.join(out, "table.json"), {"axis": args.axis, "rows": rows})
    header = f"{'variant':<28} {'l1_invisible':>12} {'l1_full':>10} {'frechet':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['variant']:<28} {r['l1_invisible']:>12.4f} {r['l1_full']:>10.4f} "
            f"{r['frechet']:>10.4f}"
        )
    table = "\n".join(lines)
    with open(os.path.join(out, "table.txt"), "w") as f:
        f.write(table + "\n")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deocclusion",
        description="Two-stage human de-occlusion: synthesize data, train, evaluate, infer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize an occlusion dataset")
    p.add_argument("--out", default=None, help=f"output dir (or ${RUN_DIR_ENV})")
    p.add_argument("--count", type=int, default=32, help="number of humans when --humans unset")
    p.add_argument("--humans", type=int, default=None)
    p.add_argument("--per-human", type=int, default=1)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--canvas", type=int, default=64)
    p.add_argument("--part-count", type=int, default=7)
    p.add_argument("--severity", type=float, default=0.3)
    p.add_argument("--distribution", default="train",
                   help="train, val, or custom low:high:prob[,low:high:prob...]")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    for name, func in (("train-mask", cmd_train_mask), ("train-recover", cmd_train_recover)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a synthesized dataset")
        p.add_argument("--data", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="run the cascade over a dataset and report metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True, help="mask-stage checkpoint")
    p.add_argument("--stage2", default=None, help="recovery-stage checkpoint")
    p.add_argument("--out", default=None)
    p.add_argument("--grids", type=int, default=0, help="save N qualitative grids")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run the cascade on one sample")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", default=None)
    p.add_argument("--sample", default=None, help="a dataset sample directory")
    p.add_argument("--image", default=None, help="occluded image PNG")
    p.add_argument("--mask", default=None, help="rough visible-mask PNG")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="sweep one recovery knob and tabulate metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--axis", required=True,
                   choices=("background_weight", "assembly", "streams"))
    p.add_argument("--values", default=None, help="comma list; default sweeps the axis")
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses 2 for usage errors; those are validation failures here
        return 0 if e.code in (0, None) else 1
    try:
        if args.command == "infer" and not args.sample and not (args.image and args.mask):
            raise ConfigError("infer needs --sample or both --image and --mask")
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, SizingError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (PlacementError, Exception) as e:  # noqa: BLE001
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
