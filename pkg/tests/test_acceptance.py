"""End-to-end acceptance gate.

Eight numbered criteria, each printing one PASS/FAIL line on the live
terminal (capture disabled for that line only). Heavy training state is
shared through session fixtures so the gate stays inside a CPU budget.
"""

import json
import os
import time
import zlib

import numpy as np
import pytest
import torch

from deocclusion.config import TrainConfig
from deocclusion.datagen import TRAIN_RATIOS, build_dataset, save_dataset
from deocclusion.evalkit import FRECHET_RIDGE, evaluate, frechet_distance, iou
from deocclusion.losses import (
    FrozenEmbedding,
    adversarial_pair,
    binary_cross_entropy,
    categorical_cross_entropy,
    l1_loss,
    perceptual_loss,
    style_loss,
)
from deocclusion.maskcomp import (
    MaskCompletionNet,
    invisible_mask,
    make_mask_discriminator,
    stage1_loss,
)
from deocclusion.maskcomp.hourglass import Hourglass
from deocclusion.maskcomp.templates import TemplateAttention, TemplateBank, kmeans_lloyd
from deocclusion.pipeline import batch_from_samples
from deocclusion.recovery import (
    PartialConv2d,
    make_image_discriminator,
    partial_conv,
    relation_matrix,
    stage2_loss,
)
from deocclusion.recovery.pga import BodyStream, GuidedAttention, RelationStream
from deocclusion.train import (
    save_stage1,
    save_stage2,
    stage1_train_metrics,
    stage2_train_metrics,
    train_stage1,
    train_stage2,
)

from fdcheck import fd_gradcheck

# Frozen overfit thresholds (confirmed by the first passing training run).
OVERFIT_AMODAL_IOU = 0.90
OVERFIT_INVISIBLE_IOU = 0.60
OVERFIT_INVISIBLE_L1 = 0.05
OVERFIT_MAX_ITERATIONS = 2000
OVERFIT_BUDGET_SECONDS = 20 * 60


def _verdict(capsys, label, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    with capsys.disabled():
        print(f"\n[acceptance] {label}: {tag}{suffix}")
    assert ok, f"{label}: {tag}{suffix}"


# ---------------------------------------------------------------------------
# shared training state (criterion 5 produces it, criterion 8 consumes it)

@pytest.fixture(scope="session")
def overfit_samples():
    return build_dataset(master_seed=11, human_count=8, occluders_per_human=1,
                         distribution=TRAIN_RATIOS, size=(64, 64), part_count=7,
                         corrupt_severity=0.3, split="train")


@pytest.fixture(scope="session")
def overfit_stage1(overfit_samples):
    cfg = TrainConfig(stage="mask", iterations=OVERFIT_MAX_ITERATIONS,
                      batch_size=8, seed=0, optimizer="adam", lr=1e-3,
                      log_interval=500, eval_interval=50,
                      stop_amodal_iou=OVERFIT_AMODAL_IOU,
                      stop_invisible_iou=OVERFIT_INVISIBLE_IOU)
    start = time.time()
    result = train_stage1(cfg, overfit_samples)
    return result, cfg, time.time() - start


@pytest.fixture(scope="session")
def overfit_stage2(overfit_samples):
    # reconstruction-focused objective: the adversarial and style terms pull
    # away from pixel-exact memorization, so the overfit check silences them
    cfg = TrainConfig(stage="recover", iterations=OVERFIT_MAX_ITERATIONS,
                      batch_size=8, seed=0, optimizer="adam", lr=1e-3,
                      beta_adv=0.0, beta_style=0.0,
                      log_interval=500, eval_interval=50,
                      stop_invisible_l1=OVERFIT_INVISIBLE_L1)
    start = time.time()
    result = train_stage2(cfg, overfit_samples)
    return result, cfg, time.time() - start


# ---------------------------------------------------------------------------
# criterion 1: oracle equivalence

def test_criterion_1_oracle_equivalence(capsys):
    rng = np.random.default_rng(0)
    start = time.time()
    failures = []

    # IoU and invisible-mask set algebra, 100 instances each
    for i in range(100):
        a = (rng.uniform(size=(10, 10)) > 0.5).astype(np.float32)
        b = (rng.uniform(size=(10, 10)) > 0.5).astype(np.float32)
        inter = sum(1 for y in range(10) for x in range(10) if a[y, x] and b[y, x])
        union = sum(1 for y in range(10) for x in range(10) if a[y, x] or b[y, x])
        expected = inter / union if union else 1.0
        if abs(iou(a, b) - expected) >= 1e-5:
            failures.append(f"iou instance {i}")
        amodal = np.maximum(a, b)
        inv = invisible_mask(torch.from_numpy(amodal), torch.from_numpy(a * amodal))
        exp_inv = np.array([[1.0 if amodal[y, x] and not (a * amodal)[y, x] else 0.0
                             for x in range(10)] for y in range(10)], dtype=np.float32)
        if not np.array_equal(inv.numpy(), exp_inv):
            failures.append(f"invisible-mask instance {i}")

    # k-means objective: replay the documented protocol with explicit loops
    # and compare the recorded objective history step by step
    def naive_kmeans_history(points, k, seed, max_iter=100, rel_tol=1e-6):
        points = np.asarray(points, dtype=np.float64)
        local = np.random.default_rng(seed)
        n = len(points)
        centers = [points[int(local.integers(n))]]
        while len(centers) < k:
            d2 = np.array([min(np.sum((p - c) ** 2) for c in centers)
                           for p in points])
            centers.append(points[int(local.choice(n, p=d2 / d2.sum()))])
        centers = np.stack(centers)
        prev = np.inf
        assign = np.zeros(n, dtype=np.int64)
        history = []
        for _ in range(max_iter):
            per_point = np.zeros(n)
            for j, p in enumerate(points):
                ds = [float(np.sum((p - c) ** 2)) for c in centers]
                assign[j] = int(np.argmin(ds))
                per_point[j] = min(ds)
            obj = float(per_point.sum())
            history.append(obj)
            for j in range(k):
                sel = points[assign == j]
                centers[j] = (points[int(per_point.argmax())] if len(sel) == 0
                              else sel.mean(0))
            if prev - obj <= rel_tol * max(prev, 1e-12):
                break
            prev = obj
        return assign, history

    for i in range(100):
        pts = rng.normal(size=(20, 3))
        _, assign, history = kmeans_lloyd(pts, 4, seed=i)
        exp_assign, exp_history = naive_kmeans_history(pts, 4, seed=i)
        if not np.array_equal(assign, exp_assign):
            failures.append(f"kmeans assignments instance {i}")
        if len(history) != len(exp_history) or any(
                abs(a - b) >= 1e-9 * max(1.0, abs(b))
                for a, b in zip(history, exp_history)):
            failures.append(f"kmeans objective instance {i}")

    # relation matrix scores + normalization vs a double loop
    for i in range(100):
        kv = rng.normal(size=(1, 2, 3, 3))
        ka = rng.normal(size=(1, 2, 3, 3))
        vm = (rng.uniform(size=(1, 1, 3, 3)) > 0.5).astype(np.float64)
        rel, scores = relation_matrix(torch.from_numpy(kv), torch.from_numpy(ka),
                                      torch.from_numpy(vm))
        hw = 9
        vis = (kv * vm).reshape(2, hw)
        hid = (ka * (1 - vm)).reshape(2, hw)
        exp_scores = np.zeros((hw, hw))
        for q in range(hw):
            for p in range(hw):
                exp_scores[q, p] = float(np.dot(vis[:, q], hid[:, p]))
        if np.abs(scores.numpy()[0] - exp_scores).max() >= 1e-9:
            failures.append(f"relation scores instance {i}")
        exp_rel = np.zeros((hw, hw))
        for p in range(hw):
            col = np.exp(exp_scores[:, p] - exp_scores[:, p].max())
            exp_rel[:, p] = col / col.sum()
        if np.abs(rel.numpy()[0] - exp_rel).max() >= 1e-9:
            failures.append(f"relation softmax instance {i}")

    # partial convolution vs a window loop
    for i in range(100):
        x = rng.normal(size=(1, 2, 6, 6))
        m = (rng.uniform(size=(1, 1, 6, 6)) > 0.4).astype(np.float64)
        w = rng.normal(size=(2, 2, 3, 3))
        bias = rng.normal(size=(2,))
        out, nm = partial_conv(torch.from_numpy(x), torch.from_numpy(m),
                               torch.from_numpy(w), torch.from_numpy(bias), 1, 1)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        mp = np.pad(m, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for oy in range(6):
            for ox in range(6):
                mwin = mp[0, 0, oy:oy + 3, ox:ox + 3]
                valid = mwin.sum()
                for co in range(2):
                    if valid == 0:
                        exp = 0.0
                    else:
                        acc = sum((w[co, ci] * xp[0, ci, oy:oy + 3, ox:ox + 3]
                                   * mwin).sum() for ci in range(2))
                        exp = acc * (9.0 / valid) + bias[co]
                    if abs(float(out[0, co, oy, ox]) - exp) >= 1e-9:
                        failures.append(f"partial conv instance {i} at {oy},{ox}")
                if float(nm[0, 0, oy, ox]) != (1.0 if valid > 0 else 0.0):
                    failures.append(f"partial conv mask instance {i}")
        if failures:
            break  # no need to spam

    # Frechet distance vs an eigendecomposition oracle
    for i in range(100):
        a = rng.normal(size=(20, 4))
        b = rng.normal(loc=0.2, size=(20, 4))
        ca = np.cov(a, rowvar=False, ddof=1) + FRECHET_RIDGE * np.eye(4)
        cb = np.cov(b, rowvar=False, ddof=1) + FRECHET_RIDGE * np.eye(4)
        wa, va = np.linalg.eigh(ca)
        sa = (va * np.sqrt(np.clip(wa, 0, None))) @ va.T
        wi, _ = np.linalg.eigh(sa @ cb @ sa)
        tr_sqrt = float(np.sqrt(np.clip(wi, 0, None)).sum())
        mu = a.mean(0) - b.mean(0)
        expected = float(mu @ mu + np.trace(ca) + np.trace(cb) - 2 * tr_sqrt)
        if abs(frechet_distance(a, b) - expected) >= 1e-9 * max(1.0, abs(expected)):
            failures.append(f"frechet instance {i}")

    elapsed = time.time() - start
    ok = not failures and elapsed < 60
    detail = f"{elapsed:.1f}s" + (f"; first failures: {failures[:3]}" if failures else "")
    _verdict(capsys, "criterion 1: oracle equivalence", ok, detail)


# ---------------------------------------------------------------------------
# criterion 2: finite-difference gradient suite

def test_criterion_2_gradient_suite(capsys):
    start = time.time()
    failures = []
    torch.manual_seed(0)

    def check(name, fn, params, **kw):
        try:
            fd_gradcheck(fn, params, **kw)
        except AssertionError as e:
            failures.append(f"{name}: {e}")

    proj = {}

    def scalarize(name, t):
        # fixed random projection so the scalar sees every output channel
        if name not in proj:
            key = zlib.crc32(name.encode())
            proj[name] = torch.from_numpy(
                np.random.default_rng(key).normal(size=tuple(t.shape)))
        return (t * proj[name]).sum()

    # both hourglasses + heads (modal-style 4-channel input, amodal-style)
    for tag, in_ch in (("modal hourglass", 4), ("amodal hourglass", 6)):
        hg = Hourglass(in_channels=in_ch, part_count=3, width=4, depth=2).double()
        x = torch.rand(1, in_ch, 8, 8, dtype=torch.float64)
        params = [p for p in hg.parameters()]

        def fn(hg=hg, x=x, tag=tag):
            mask, parsing, feat = hg(x)
            return (scalarize(tag + ".m", mask) + scalarize(tag + ".p", parsing)
                    + scalarize(tag + ".f", feat))

        check(tag, fn, params, max_coords=3)

    # template attention
    bank = TemplateBank(np.random.default_rng(1).uniform(size=(2, 8, 8))
                        .astype(np.float32), seed=0, source_count=4)
    att = TemplateAttention(bank, out_channels=2).double()
    soft = torch.rand(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)

    def att_fn():
        feat, weights = att(soft)
        return scalarize("att.f", feat) + scalarize("att.w", weights)

    check("template attention", att_fn, [soft] + list(att.parameters()), max_coords=3)

    # PGA streams and assemblies
    pars = torch.softmax(torch.rand(1, 3, 4, 4, dtype=torch.float64), dim=1)
    vis = (torch.rand(1, 1, 4, 4) > 0.5).double()
    feat_in = torch.rand(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)

    body = BodyStream(channels=4, part_count=3, out_channels=4).double()
    check("body stream", lambda: scalarize("body", body(feat_in, pars, pars)),
          [feat_in] + list(body.parameters()), max_coords=3)

    rel = RelationStream(channels=4, part_count=3, key_dim=3).double()
    check("relation stream", lambda: scalarize("rel", rel(feat_in, pars, pars, vis)),
          [feat_in] + list(rel.parameters()), max_coords=3)

    for assembly in ("fusion", "cascade"):
        ga = GuidedAttention(channels=4, part_count=3, key_dim=3,
                             assembly=assembly, use_body=True, use_relation=True).double()
        check(f"guided attention {assembly}",
              lambda ga=ga, a=assembly: scalarize("ga" + a, ga(feat_in, pars, pars, vis)),
              [feat_in] + list(ga.parameters()), max_coords=2)

    # small partial-conv network (two layers, downsample then refine)
    pc1 = PartialConv2d(2, 3, kernel_size=3, stride=2, padding=1).double()
    pc2 = PartialConv2d(3, 2, kernel_size=3, stride=1, padding=1).double()
    px = torch.rand(1, 2, 8, 8, dtype=torch.float64, requires_grad=True)
    pm = (torch.rand(1, 1, 8, 8) > 0.3).double()

    def pc_fn():
        h, m = pc1(px, pm)
        h = torch.nn.functional.leaky_relu(h, 0.2)
        out, _ = pc2(h, m)
        return scalarize("pc", out)

    check("partial-conv net", pc_fn,
          [px] + list(pc1.parameters()) + list(pc2.parameters()), max_coords=3)

    # every loss term; probabilities go through sigmoid so FD stays in-domain
    z_pred = torch.randn(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    t_bin = (torch.rand(1, 1, 8, 8) > 0.5).double()
    check("bce", lambda: binary_cross_entropy(torch.sigmoid(z_pred), t_bin),
          [z_pred], max_coords=6)

    z_logits = torch.randn(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
    t_onehot = torch.zeros(1, 3, 8, 8, dtype=torch.float64)
    t_onehot[0, 0] = 1.0
    check("cce", lambda: categorical_cross_entropy(z_logits, t_onehot),
          [z_logits], max_coords=6)

    a64 = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
    b64 = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    check("l1", lambda: l1_loss(a64, b64), [a64], max_coords=6)

    emb = FrozenEmbedding(seed=0).double()
    check("perceptual", lambda: perceptual_loss(torch.sigmoid(a64), b64, emb),
          [a64], max_coords=4)
    check("style", lambda: style_loss(torch.sigmoid(a64), b64, emb),
          [a64], max_coords=4)

    z_real = torch.randn(1, 1, 4, 4, dtype=torch.float64)
    z_fake = torch.randn(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
    check("adversarial d",
          lambda: adversarial_pair(torch.sigmoid(z_real), torch.sigmoid(z_fake))[0],
          [z_fake], max_coords=6)
    check("adversarial g",
          lambda: adversarial_pair(torch.sigmoid(z_real), torch.sigmoid(z_fake))[1],
          [z_fake], max_coords=6)
    check("adversarial g saturating",
          lambda: adversarial_pair(torch.sigmoid(z_real), torch.sigmoid(z_fake),
                                   saturating=True)[1],
          [z_fake], max_coords=6)

    elapsed = time.time() - start
    ok = not failures and elapsed < 300
    detail = f"{elapsed:.1f}s" + (f"; {failures[:3]}" if failures else "")
    _verdict(capsys, "criterion 2: gradient suite", ok, detail)


# ---------------------------------------------------------------------------
# criterion 3: exact loss weighting

def _val(t):
    return float(t.detach())


def test_criterion_3_coefficient_fidelity(capsys):
    torch.manual_seed(0)
    failures = []

    # fixed synthetic stage-1 inputs, double precision end to end
    bank = TemplateBank(np.random.default_rng(0).uniform(size=(2, 16, 16))
                        .astype(np.float32), seed=0, source_count=4)
    net = MaskCompletionNet(part_count=3, bank=bank, width=4, depth=2,
                            init_seed=0).double()
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    m0 = (torch.rand(1, 1, 16, 16) > 0.5).double()
    out = net(x, m0)
    amodal_t = (torch.rand(1, 1, 16, 16) > 0.4).double()
    modal_t = amodal_t * (torch.rand(1, 1, 16, 16) > 0.3).double()
    pars_t = torch.zeros(1, 3, 16, 16, dtype=torch.float64)
    pars_t[0, 1] = amodal_t[0, 0]
    pars_t[0, 0] = 1.0 - amodal_t[0, 0]
    disc = make_mask_discriminator().double()
    emb = FrozenEmbedding(0).double()
    d_real, d_fake = disc(amodal_t), disc(out.amodal)

    base1 = stage1_loss(out, modal_t, amodal_t, pars_t, pars_t, d_real, d_fake, emb)
    defaults1 = {"segmentation": 1.0, "adversarial": 1.0, "generation": 0.1}
    for name, coeff in defaults1.items():
        want = coeff * _val(base1[name])
        got = _val(base1[f"{name}_contribution"])
        if got != want:
            failures.append(f"stage1 {name}: {got!r} != {coeff} * term")

    # doubling one coefficient doubles exactly that contribution, bitwise
    for idx, name in enumerate(defaults1):
        coeffs = [1.0, 1.0, 0.1]
        coeffs[idx] *= 2.0
        doubled = stage1_loss(out, modal_t, amodal_t, pars_t, pars_t,
                              d_real, d_fake, emb, coeffs=tuple(coeffs))
        if _val(doubled[f"{name}_contribution"]) != 2.0 * _val(
                base1[f"{name}_contribution"]):
            failures.append(f"stage1 doubling {name} not exact")
        for other in defaults1:
            if other != name and _val(doubled[f"{other}_contribution"]) != _val(
                    base1[f"{other}_contribution"]):
                failures.append(f"stage1 doubling {name} disturbed {other}")

    # stage 2 on fixed inputs
    target = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    pred = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    disc2 = make_image_discriminator().double()
    base2 = stage2_loss(pred, target, disc2(target), disc2(pred), emb)
    defaults2 = {"adversarial": 0.1, "l1": 1.0, "perceptual": 1.0, "style": 40.0}
    for name, coeff in defaults2.items():
        want = coeff * _val(base2[name])
        got = _val(base2[f"{name}_contribution"])
        if got != want:
            failures.append(f"stage2 {name}: {got!r} != {coeff} * term")

    for idx, name in enumerate(defaults2):
        coeffs = [0.1, 1.0, 1.0, 40.0]
        coeffs[idx] *= 2.0
        doubled = stage2_loss(pred, target, disc2(target), disc2(pred), emb,
                              coeffs=tuple(coeffs))
        if _val(doubled[f"{name}_contribution"]) != 2.0 * _val(
                base2[f"{name}_contribution"]):
            failures.append(f"stage2 doubling {name} not exact")

    # doubling the l1 component input doubles the weighted contribution
    # bitwise; a zero target keeps the elementwise doubling exact
    zero = torch.zeros_like(target)
    lo = stage2_loss(pred, zero, disc2(zero), disc2(pred), emb)
    hi = stage2_loss(2.0 * pred, zero, disc2(zero), disc2(pred), emb)
    if _val(hi["l1_contribution"]) != 2.0 * _val(lo["l1_contribution"]):
        failures.append("stage2 l1 input doubling not exact")

    _verdict(capsys, "criterion 3: coefficient fidelity", not failures,
             "; ".join(failures[:3]))


# ---------------------------------------------------------------------------
# criterion 4: relation-matrix invariants

def test_criterion_4_relation_invariants(capsys):
    rng = np.random.default_rng(4)
    failures = []
    for i in range(500):
        h = int(rng.integers(3, 6))
        w = int(rng.integers(3, 6))
        c = int(rng.integers(2, 5))
        kv = rng.normal(size=(1, c, h, w))
        ka = rng.normal(size=(1, c, h, w))
        vm = (rng.uniform(size=(1, 1, h, w)) > rng.uniform(0.2, 0.8)).astype(np.float64)
        rel, scores = relation_matrix(torch.from_numpy(kv), torch.from_numpy(ka),
                                      torch.from_numpy(vm))
        hw = h * w
        rel = rel.numpy()[0]
        scores = scores.numpy()[0]
        flat_vis = vm.reshape(hw)

        # every column is a softmax, so it sums to 1
        col_sums = rel.sum(axis=0)
        if np.abs(col_sums - 1.0).max() >= 1e-6:
            failures.append(f"column sums off at instance {i}")

        # a visible position contributes no hidden feature: its column is
        # all-zero before normalization and exactly uniform after
        for p in range(hw):
            if flat_vis[p] == 1.0:
                if np.abs(rel[:, p] - 1.0 / hw).max() >= 1e-6:
                    failures.append(f"visible column not uniform at instance {i}")
                    break

        # a hidden position contributes no visible feature: its row is
        # exactly zero before normalization
        for q in range(hw):
            if flat_vis[q] == 0.0:
                if np.abs(scores[q, :]).max() != 0.0:
                    failures.append(f"hidden row not zero at instance {i}")
                    break
        if failures:
            break

    _verdict(capsys, "criterion 4: relation-matrix invariants", not failures,
             failures[0] if failures else "500 instances")


# ---------------------------------------------------------------------------
# criterion 5: overfit one batch

def test_criterion_5_overfit_one_batch(capsys, overfit_samples, overfit_stage1,
                                       overfit_stage2):
    res1, cfg1, wall1 = overfit_stage1
    res2, cfg2, wall2 = overfit_stage2
    tensors = batch_from_samples(overfit_samples)
    m1 = stage1_train_metrics(res1.model, tensors)
    m2 = stage2_train_metrics(res2.model, tensors)
    wall = wall1 + wall2

    failures = []
    if m1["iou_amodal"] < OVERFIT_AMODAL_IOU:
        failures.append(f"amodal IoU {m1['iou_amodal']:.3f} < {OVERFIT_AMODAL_IOU}")
    if m1["iou_invisible"] < OVERFIT_INVISIBLE_IOU:
        failures.append(
            f"invisible IoU {m1['iou_invisible']:.3f} < {OVERFIT_INVISIBLE_IOU}")
    if m2["l1_invisible"] > OVERFIT_INVISIBLE_L1:
        failures.append(
            f"invisible l1 {m2['l1_invisible']:.3f} > {OVERFIT_INVISIBLE_L1}")
    if res1.stopped_iteration > OVERFIT_MAX_ITERATIONS:
        failures.append("stage 1 exceeded the iteration budget")
    if res2.stopped_iteration > OVERFIT_MAX_ITERATIONS:
        failures.append("stage 2 exceeded the iteration budget")
    if wall >= OVERFIT_BUDGET_SECONDS:
        failures.append(f"wall {wall:.0f}s over budget")

    detail = (f"stage1 {res1.stopped_iteration} iters amodal {m1['iou_amodal']:.3f} "
              f"invisible {m1['iou_invisible']:.3f}; stage2 {res2.stopped_iteration} "
              f"iters l1 {m2['l1_invisible']:.4f}; wall {wall:.0f}s")
    if failures:
        detail += "; " + "; ".join(failures)
    _verdict(capsys, "criterion 5: overfit one batch", not failures, detail)


# ---------------------------------------------------------------------------
# criterion 6: ratio distribution

def test_criterion_6_ratio_distribution(capsys):
    samples = build_dataset(master_seed=600, human_count=500,
                            occluders_per_human=20, distribution=TRAIN_RATIOS,
                            size=(64, 64), part_count=7, corrupt_severity=0.3,
                            split="train")
    ratios = np.array([s.occlusion_ratio for s in samples])
    failures = []
    detail_bits = []
    for lo, hi, p in TRAIN_RATIOS.bins:
        freq = float(np.mean((ratios >= lo) & (ratios < hi)))
        detail_bits.append(f"[{lo:.1f},{hi:.1f})={freq:.3f}")
        if abs(freq - p) > 0.02:
            failures.append(f"bin [{lo},{hi}) at {freq:.3f}, target {p:.3f}")
    covered = sum(float(np.mean((ratios >= lo) & (ratios < hi)))
                  for lo, hi, _ in TRAIN_RATIOS.bins)
    if abs(covered - 1.0) > 0.02:
        failures.append(f"mass outside declared bins: {1 - covered:.3f}")
    _verdict(capsys, "criterion 6: ratio distribution", not failures,
             f"{len(samples)} samples " + " ".join(detail_bits))


# ---------------------------------------------------------------------------
# criterion 7: determinism

def _pipeline_report(workdir):
    samples = build_dataset(master_seed=70, human_count=8, occluders_per_human=1,
                            distribution=TRAIN_RATIOS, size=(64, 64), part_count=7,
                            corrupt_severity=0.3, split="train")
    save_dataset(samples, os.path.join(workdir, "data"), master_seed=70)
    cfg = TrainConfig(stage="mask", iterations=100, batch_size=8, seed=0,
                      hourglass_width=8, hourglass_depth=2, attention_channels=4,
                      template_count=8, template_resolution=32,
                      log_interval=50, eval_interval=50, deterministic=True)
    res = train_stage1(cfg, samples)
    report = evaluate(samples, res.model, None, embedding=FrozenEmbedding(0),
                      config_fingerprint=cfg.fingerprint())
    return report.to_json(), res.history


def test_criterion_7_determinism(capsys, tmp_path):
    json_a, hist_a = _pipeline_report(str(tmp_path / "a"))
    json_b, hist_b = _pipeline_report(str(tmp_path / "b"))
    ok = json_a == json_b and hist_a == hist_b
    detail = "reports bit-identical" if ok else "reports differ"
    if json_a != json_b:
        a = json.loads(json_a)["metrics"]
        b = json.loads(json_b)["metrics"]
        diffs = [k for k in a if a[k] != b.get(k)]
        detail += f" in metrics {diffs[:4]}"
    _verdict(capsys, "criterion 7: determinism", ok, detail)


# ---------------------------------------------------------------------------
# criterion 8: cascade integrity through the CLI

def test_criterion_8_cascade_integrity(capsys, tmp_path, overfit_stage1,
                                       overfit_stage2):
    from PIL import Image

    from deocclusion.cli import main as cli_main

    res1, cfg1, _ = overfit_stage1
    res2, cfg2, _ = overfit_stage2
    ck1 = str(tmp_path / "s1.ckpt")
    ck2 = str(tmp_path / "s2.ckpt")
    save_stage1(ck1, res1, cfg1)
    save_stage2(ck2, res2, cfg2)

    # a held-out sample: same generator family, a figure the training set
    # never saw
    held_out = build_dataset(master_seed=900, human_count=1, occluders_per_human=1,
                             distribution=TRAIN_RATIOS, size=(64, 64), part_count=7,
                             corrupt_severity=0.3, split="test")
    data_dir = str(tmp_path / "held")
    manifest = save_dataset(held_out, data_dir, master_seed=900)
    sample_dir = os.path.join(data_dir, manifest["sample_dirs"][0])
    out_dir = str(tmp_path / "infer")

    code = cli_main(["infer", "--stage1", ck1, "--stage2", ck2,
                     "--sample", sample_dir, "--out", out_dir])
    failures = []
    if code != 0:
        failures.append(f"cli exit code {code}")

    with open(os.path.join(out_dir, "result.json")) as f:
        result = json.load(f)
    total_px = 64 * 64
    violations = result["nesting_violations"]
    if violations >= 0.01 * total_px:
        failures.append(f"nesting violations {violations} >= 1% of {total_px}")

    modal = np.asarray(Image.open(os.path.join(out_dir, "mask_modal.png"))) > 127
    amodal = np.asarray(Image.open(os.path.join(out_dir, "mask_amodal.png"))) > 127
    if (modal & ~amodal).sum() != 0:
        failures.append("post-fix modal escapes amodal")

    occluded = np.asarray(Image.open(os.path.join(sample_dir, "occluded.png")))
    composite = np.asarray(Image.open(os.path.join(out_dir, "composite.png")))
    vis = modal
    if not np.array_equal(composite[vis], occluded[vis]):
        failures.append("composite differs from input on the visible region")

    detail = f"violations {violations}/{total_px}"
    if failures:
        detail += "; " + "; ".join(failures)
    _verdict(capsys, "criterion 8: cascade integrity", not failures, detail)
