"""Training loops for both stages, checkpoint glue, determinism setup."""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .datagen import OcclusionSample
from .errors import CheckpointError
from .losses import FrozenEmbedding, adversarial_pair
from .maskcomp import (
    MaskCompletionNet,
    TemplateBank,
    binarize,
    build_template_bank,
    invisible_mask,
    make_mask_discriminator,
    stage1_loss,
)
from .pipeline import batch_from_samples
from .recovery import RecoveryNet, make_image_discriminator, stage2_loss
from .evalkit import iou


def prepare_determinism(config: TrainConfig) -> None:
    """Pin every RNG and algorithm choice this process controls."""
    torch.manual_seed(config.seed)
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _make_optimizer(params, config: TrainConfig):
    kind, lr = config.resolved_optimizer()
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr, momentum=config.momentum)
    return torch.optim.Adam(params, lr=lr, betas=(config.adam_beta1, config.adam_beta2))


def _batch_indices(n: int, batch_size: int, seed: int, iteration: int) -> np.ndarray:
    if batch_size >= n:
        return np.arange(n)
    rng = np.random.default_rng([seed, 7, iteration])
    return rng.choice(n, size=batch_size, replace=False)


def bank_from_samples(samples: list[OcclusionSample], config: TrainConfig) -> TemplateBank:
    """Cluster the training full-body masks into the pose template bank.

    Small corpora cannot support more templates than masks; the count is
    clamped with a warning rather than failing the run.
    """
    k = config.template_count
    if len(samples) < k:
        warnings.warn(
            f"only {len(samples)} masks for {k} templates; clamping the bank to "
            f"{len(samples)}",
            stacklevel=2,
        )
        k = len(samples)
    return build_template_bank(
        [s.amodal_mask for s in samples],
        k=k,
        seed=config.seed,
        resolution=(config.template_resolution, config.template_resolution),
    )


@dataclasses.dataclass
class Stage1Result:
    model: MaskCompletionNet
    disc: torch.nn.Module
    bank: TemplateBank
    history: list[dict]
    stopped_iteration: int


@dataclasses.dataclass
class Stage2Result:
    model: RecoveryNet
    disc: torch.nn.Module
    history: list[dict]
    stopped_iteration: int


def stage1_train_metrics(model: MaskCompletionNet, tensors: dict) -> dict[str, float]:
    """Mean mask IoUs over a tensor batch, with the nesting fix applied."""
    model.eval()
    with torch.no_grad():
        out = model(tensors["occluded_image"], tensors["initial_mask"])
    model.train()
    modal = binarize(out.modal) * binarize(out.amodal)
    amodal = binarize(out.amodal)
    rows = {"modal": [], "amodal": [], "invisible": []}
    for i in range(amodal.shape[0]):
        pm = modal[i, 0].numpy()
        pa = amodal[i, 0].numpy()
        tm = tensors["modal_mask"][i, 0].numpy()
        ta = tensors["amodal_mask"][i, 0].numpy()
        rows["modal"].append(iou(pm, tm))
        rows["amodal"].append(iou(pa, ta))
        rows["invisible"].append(iou(invisible_mask(pa, pm), invisible_mask(ta, tm)))
    return {f"iou_{k}": float(np.mean(v)) for k, v in rows.items()}


def stage2_train_metrics(model: RecoveryNet, tensors: dict) -> dict[str, float]:
    """Teacher-forced reconstruction error over the true hidden region."""
    model.eval()
    with torch.no_grad():
        recovered, _ = model(
            tensors["occluded_image"], tensors["modal_mask"], tensors["amodal_mask"],
            tensors["modal_parsing"], tensors["amodal_parsing"],
        )
    model.train()
    hidden = tensors["amodal_mask"] * (1.0 - tensors["modal_mask"])
    weight = hidden.sum() * recovered.shape[1]
    if weight.item() == 0:
        return {"l1_invisible": 0.0}
    err = ((recovered - tensors["full_image"]).abs() * hidden).sum() / weight
    return {"l1_invisible": float(err.item())}


def train_stage1(
    config: TrainConfig,
    samples: list[OcclusionSample],
    bank: TemplateBank | None = None,
    embedding: FrozenEmbedding | None = None,
    log=None,
) -> Stage1Result:
    """Alternating generator/discriminator updates on mask completion."""
    prepare_determinism(config)
    if bank is None:
        bank = bank_from_samples(samples, config)
    if embedding is None:
        embedding = FrozenEmbedding(config.embedding_seed)
    model = MaskCompletionNet(
        part_count=config.part_count,
        bank=bank,
        width=config.hourglass_width,
        depth=config.hourglass_depth,
        attention_channels=config.attention_channels,
        init_seed=config.seed,
    )
    disc = make_mask_discriminator(init_seed=config.seed + 1)
    opt_g = _make_optimizer(model.parameters(), config)
    opt_d = _make_optimizer(disc.parameters(), config)
    tensors = batch_from_samples(samples)
    coeffs = (config.lambda_seg, config.lambda_adv, config.lambda_gen)
    want_stop = config.stop_amodal_iou >= 0 or config.stop_invisible_iou >= 0

    history: list[dict] = []
    stopped = config.iterations
    model.train()
    disc.train()
    for it in range(config.iterations):
        idx = torch.from_numpy(_batch_indices(len(samples), config.batch_size, config.seed, it))
        images = tensors["occluded_image"][idx]
        initial = tensors["initial_mask"][idx]
        modal_t = tensors["modal_mask"][idx]
        amodal_t = tensors["amodal_mask"][idx]
        modal_p = tensors["modal_parsing"][idx]
        amodal_p = tensors["amodal_parsing"][idx]

        out = model(images, initial)
        fake_probs = disc(out.amodal)
        with torch.no_grad():
            real_probs = disc(amodal_t)
        losses = stage1_loss(
            out, modal_t, amodal_t, modal_p, amodal_p,
            real_probs, fake_probs, embedding,
            coeffs=coeffs, saturating=config.saturating_gan,
        )
        opt_g.zero_grad()
        losses["total"].backward()
        opt_g.step()

        d_real = disc(amodal_t)
        d_fake = disc(out.amodal.detach())
        d_loss, _ = adversarial_pair(d_real, d_fake, saturating=config.saturating_gan)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        if (it + 1) % config.log_interval == 0 or it + 1 == config.iterations:
            row = {"iteration": it + 1}
            row.update({k: float(v.item()) for k, v in losses.items()})
            history.append(row)
            if log:
                log(f"stage1 iter {it + 1}: total {row['total']:.4f}")
        if want_stop and (it + 1) % config.eval_interval == 0:
            metrics = stage1_train_metrics(model, tensors)
            ok = True
            if config.stop_amodal_iou >= 0:
                ok = ok and metrics["iou_amodal"] >= config.stop_amodal_iou
            if config.stop_invisible_iou >= 0:
                ok = ok and metrics["iou_invisible"] >= config.stop_invisible_iou
            if ok:
                stopped = it + 1
                if log:
                    log(f"stage1 early stop at iter {stopped}: {metrics}")
                break
    model.eval()
    disc.eval()
    return Stage1Result(model=model, disc=disc, bank=bank, history=history, stopped_iteration=stopped)


def train_stage2(
    config: TrainConfig,
    samples: list[OcclusionSample],
    embedding: FrozenEmbedding | None = None,
    log=None,
) -> Stage2Result:
    """Teacher-forced recovery training: true masks and parsings in, the
    unoccluded image as the reconstruction target."""
    prepare_determinism(config)
    if embedding is None:
        embedding = FrozenEmbedding(config.embedding_seed)
    model = RecoveryNet(
        part_count=config.part_count,
        canvas=config.canvas,
        widths=config.widths(),
        background_weight=config.background_weight,
        key_dim=config.pga_key_dim,
        assembly=config.pga_assembly,
        use_body=config.pga_body,
        use_relation=config.pga_relation,
        attention_max_cells=config.pga_max_cells,
        init_seed=config.seed,
    )
    disc = make_image_discriminator(init_seed=config.seed + 2)
    opt_g = _make_optimizer(model.parameters(), config)
    opt_d = _make_optimizer(disc.parameters(), config)
    tensors = batch_from_samples(samples)
    coeffs = (config.beta_adv, config.beta_l1, config.beta_perc, config.beta_style)
    want_stop = config.stop_invisible_l1 >= 0

    history: list[dict] = []
    stopped = config.iterations
    model.train()
    disc.train()
    for it in range(config.iterations):
        idx = torch.from_numpy(_batch_indices(len(samples), config.batch_size, config.seed, it))
        images = tensors["occluded_image"][idx]
        target = tensors["full_image"][idx]
        visible = tensors["modal_mask"][idx]
        amodal = tensors["amodal_mask"][idx]
        modal_p = tensors["modal_parsing"][idx]
        amodal_p = tensors["amodal_parsing"][idx]

        recovered, _ = model(images, visible, amodal, modal_p, amodal_p)
        fake_probs = disc(recovered)
        with torch.no_grad():
            real_probs = disc(target)
        losses = stage2_loss(
            recovered, target, real_probs, fake_probs, embedding,
            coeffs=coeffs, saturating=config.saturating_gan,
        )
        opt_g.zero_grad()
        losses["total"].backward()
        opt_g.step()

        d_real = disc(target)
        d_fake = disc(recovered.detach())
        d_loss, _ = adversarial_pair(d_real, d_fake, saturating=config.saturating_gan)
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        if (it + 1) % config.log_interval == 0 or it + 1 == config.iterations:
            row = {"iteration": it + 1}
            row.update({k: float(v.item()) for k, v in losses.items()})
            history.append(row)
            if log:
                log(f"stage2 iter {it + 1}: total {row['total']:.4f}")
        if want_stop and (it + 1) % config.eval_interval == 0:
            metrics = stage2_train_metrics(model, tensors)
            if metrics["l1_invisible"] <= config.stop_invisible_l1:
                stopped = it + 1
                if log:
                    log(f"stage2 early stop at iter {stopped}: {metrics}")
                break
    model.eval()
    disc.eval()
    return Stage2Result(model=model, disc=disc, history=history, stopped_iteration=stopped)


def _prefixed(module: torch.nn.Module, prefix: str) -> dict:
    return {prefix + k: v for k, v in module.state_dict().items()}


def save_stage1(path: str, result: Stage1Result, config: TrainConfig) -> None:
    tensors = _prefixed(result.model, "model.")
    tensors.update(_prefixed(result.disc, "disc."))
    tensors["bank.templates"] = torch.from_numpy(result.bank.templates)
    meta = {
        "stage": "mask",
        "part_count": result.model.part_count,
        "width": result.model.width,
        "depth": result.model.depth,
        "attention_channels": result.model.attention_channels,
        "init_seed": result.model.init_seed,
        "bank_seed": result.bank.seed,
        "bank_source_count": result.bank.source_count,
        "config": config.to_dict(),
        "config_fingerprint": config.fingerprint(),
        "stopped_iteration": result.stopped_iteration,
    }
    save_checkpoint(path, tensors, meta)


def load_stage1(path: str) -> tuple[MaskCompletionNet, torch.nn.Module, TemplateBank, dict]:
    tensors, meta = load_checkpoint(path)
    if meta.get("stage") != "mask":
        raise CheckpointError(f"{path} is not a mask-stage checkpoint")
    bank = TemplateBank(
        templates=tensors["bank.templates"].numpy().astype(np.float32),
        seed=int(meta.get("bank_seed", 0)),
        source_count=int(meta.get("bank_source_count", 0)),
    )
    model = MaskCompletionNet(
        part_count=int(meta["part_count"]),
        bank=bank,
        width=int(meta["width"]),
        depth=int(meta["depth"]),
        attention_channels=int(meta["attention_channels"]),
        init_seed=int(meta.get("init_seed", 0)),
    )
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                           if k.startswith("model.")})
    disc = make_mask_discriminator()
    disc.load_state_dict({k[len("disc."):]: v for k, v in tensors.items()
                          if k.startswith("disc.")})
    model.eval()
    disc.eval()
    return model, disc, bank, meta


def save_stage2(path: str, result: Stage2Result, config: TrainConfig) -> None:
    tensors = _prefixed(result.model, "model.")
    tensors.update(_prefixed(result.disc, "disc."))
    meta = {
        "stage": "recover",
        "part_count": result.model.part_count,
        "canvas": result.model.canvas,
        "widths": list(result.model.widths),
        "background_weight": result.model.background_weight,
        "key_dim": config.pga_key_dim,
        "assembly": config.pga_assembly,
        "use_body": config.pga_body,
        "use_relation": config.pga_relation,
        "attention_max_cells": config.pga_max_cells,
        "init_seed": result.model.init_seed,
        "embedding_seed": config.embedding_seed,
        "config": config.to_dict(),
        "config_fingerprint": config.fingerprint(),
        "stopped_iteration": result.stopped_iteration,
    }
    save_checkpoint(path, tensors, meta)


def load_stage2(path: str) -> tuple[RecoveryNet, torch.nn.Module, dict]:
    tensors, meta = load_checkpoint(path)
    if meta.get("stage") != "recover":
        raise CheckpointError(f"{path} is not a recovery-stage checkpoint")
    model = RecoveryNet(
        part_count=int(meta["part_count"]),
        canvas=int(meta["canvas"]),
        widths=tuple(int(w) for w in meta["widths"]),
        background_weight=float(meta["background_weight"]),
        key_dim=int(meta["key_dim"]),
        assembly=str(meta["assembly"]),
        use_body=bool(meta["use_body"]),
        use_relation=bool(meta["use_relation"]),
        attention_max_cells=int(meta.get("attention_max_cells", 4096)),
        init_seed=int(meta.get("init_seed", 0)),
    )
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                           if k.startswith("model.")})
    disc = make_image_discriminator()
    disc.load_state_dict({k[len("disc."):]: v for k, v in tensors.items()
                          if k.startswith("disc.")})
    model.eval()
    disc.eval()
    return model, disc, meta
