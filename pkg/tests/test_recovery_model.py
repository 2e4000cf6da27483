"""Recovery UNet: background dimming, validity, compositing, scale rule."""

import numpy as np
import pytest
import torch

from deocclusion.errors import ConfigError
from deocclusion.recovery import RecoveryNet, make_image_discriminator, stage2_loss
from deocclusion.recovery.model import (
    ATTENTION_MAX_CELLS,
    apply_background_proportion,
    composite,
    initial_validity,
    select_attention_scales,
)
from deocclusion.recovery.loss import STAGE2_COEFFS
from deocclusion.losses import FrozenEmbedding


class TestBackgroundProportion:
    def test_zero_weight_blanks_background(self):
        img = torch.ones(1, 3, 4, 4)
        amodal = torch.zeros(1, 1, 4, 4)
        amodal[0, 0, 1, 1] = 1.0
        out = apply_background_proportion(img, amodal, 0.0)
        assert float(out[0, :, 1, 1].sum()) == 3.0
        assert float(out.sum()) == 3.0  # everything else zeroed

    def test_unit_weight_keeps_everything(self):
        img = torch.rand(1, 3, 4, 4)
        amodal = (torch.rand(1, 1, 4, 4) > 0.5).float()
        assert torch.equal(apply_background_proportion(img, amodal, 1.0), img)

    def test_fractional_weight_scales_background(self):
        img = torch.ones(1, 3, 2, 2)
        amodal = torch.zeros(1, 1, 2, 2)
        out = apply_background_proportion(img, amodal, 0.3)
        np.testing.assert_allclose(out.numpy(), 0.3, atol=1e-7)

    def test_rejects_out_of_range(self):
        img = torch.ones(1, 3, 2, 2)
        amodal = torch.ones(1, 1, 2, 2)
        with pytest.raises(ConfigError):
            apply_background_proportion(img, amodal, 1.5)
        with pytest.raises(ConfigError):
            apply_background_proportion(img, amodal, -0.1)


class TestInitialValidity:
    def test_background_weight_zero_limits_to_visible(self):
        vis = torch.zeros(1, 1, 4, 4)
        vis[0, 0, 0, 0] = 1.0
        amodal = torch.ones(1, 1, 4, 4)  # whole frame is body
        v = initial_validity(vis, amodal, 0.0)
        np.testing.assert_array_equal(v.numpy(), vis.numpy())

    def test_background_counts_as_valid_when_kept(self):
        vis = torch.zeros(1, 1, 2, 2)
        amodal = torch.zeros(1, 1, 2, 2)
        amodal[0, 0, 0, 0] = 1.0  # one hidden body pixel
        v = initial_validity(vis, amodal, 0.3)
        assert float(v[0, 0, 0, 0]) == 0.0
        assert float(v.sum()) == 3.0  # background pixels valid


class TestComposite:
    def test_visible_region_bit_exact(self):
        occluded = torch.rand(2, 3, 8, 8)
        recovered = torch.rand(2, 3, 8, 8)
        vis = (torch.rand(2, 1, 8, 8) > 0.5).float()
        out = composite(recovered, occluded, vis)
        sel = vis.bool().expand_as(occluded)
        assert torch.equal(out[sel], occluded[sel])
        assert torch.equal(out[~sel], recovered[~sel])


class TestSelectAttentionScales:
    def test_default_canvas(self):
        # default depth is the four-level decoder: outputs 8,16,32,64
        assert select_attention_scales(64, 4, ATTENTION_MAX_CELLS) == (8, 16, 32)

    def test_large_canvas_drops_expensive_scales(self):
        # at 256 the coarsest three are 32,64,128; 128*128 blows the budget
        assert select_attention_scales(256, 4, ATTENTION_MAX_CELLS) == (32, 64)

    def test_budget_shrinks_selection(self):
        assert select_attention_scales(64, 4, 256) == (8, 16)


class TestRecoveryNet:
    def _inputs(self, b=2, size=64):
        torch.manual_seed(0)
        occ = torch.rand(b, 3, size, size)
        amodal = torch.zeros(b, 1, size, size)
        amodal[:, :, 16:48, 20:44] = 1.0
        vis = amodal.clone()
        vis[:, :, 24:40, 24:40] = 0.0
        pars = torch.zeros(b, 7, size, size)
        pars[:, 0] = 1.0 - amodal[:, 0]
        pars[:, 1] = amodal[:, 0]
        return occ, vis, amodal, pars, pars

    def test_forward_shapes(self):
        net = RecoveryNet(part_count=7, canvas=64, init_seed=0)
        rec, val = net(*self._inputs())
        assert tuple(rec.shape) == (2, 3, 64, 64)
        assert tuple(val.shape) == (2, 1, 64, 64)

    def test_output_in_unit_range(self):
        net = RecoveryNet(part_count=7, canvas=64, init_seed=0)
        with torch.no_grad():
            rec, _ = net(*self._inputs())
        assert float(rec.min()) >= 0.0 and float(rec.max()) <= 1.0

    def test_deterministic_per_seed(self):
        inputs = self._inputs()
        a, _ = RecoveryNet(7, canvas=64, init_seed=4)(*inputs)
        b, _ = RecoveryNet(7, canvas=64, init_seed=4)(*inputs)
        assert torch.equal(a, b)

    def test_attention_scale_rule_applied(self):
        net = RecoveryNet(part_count=7, canvas=64, init_seed=0)
        assert sorted(int(k) for k in net.attention.keys()) == [8, 16, 32]

    def test_gradients_reach_encoder(self):
        net = RecoveryNet(part_count=7, canvas=64, init_seed=0)
        rec, _ = net(*self._inputs(b=1))
        rec.mean().backward()
        grads = [p.grad for p in net.parameters() if p.grad is not None]
        assert len(grads) > 0

    def test_rejects_bad_background_weight(self):
        with pytest.raises(ConfigError):
            RecoveryNet(part_count=7, canvas=64, background_weight=2.0)


class TestStage2Loss:
    def _setup(self):
        torch.manual_seed(1)
        rec = torch.rand(2, 3, 32, 32)
        target = torch.rand(2, 3, 32, 32)
        disc = make_image_discriminator()
        with torch.no_grad():
            d_real, d_fake = disc(target), disc(rec)
        return rec, target, d_real, d_fake, FrozenEmbedding(0)

    def test_keys_and_total(self):
        rec, target, d_real, d_fake, emb = self._setup()
        losses = stage2_loss(rec, target, d_real, d_fake, emb)
        for key in ("adversarial", "l1", "perceptual", "style", "total",
                    "adversarial_contribution", "l1_contribution",
                    "perceptual_contribution", "style_contribution",
                    "discriminator"):
            assert key in losses
        total = sum(float(losses[f"{k}_contribution"])
                    for k in ("adversarial", "l1", "perceptual", "style"))
        assert float(losses["total"]) == pytest.approx(total, rel=1e-6)

    def test_default_coefficients(self):
        assert STAGE2_COEFFS == (0.1, 1.0, 1.0, 40.0)

    def test_style_dominates_via_weight(self):
        rec, target, d_real, d_fake, emb = self._setup()
        losses = stage2_loss(rec, target, d_real, d_fake, emb)
        ratio = float(losses["style_contribution"]) / float(losses["style"])
        assert ratio == pytest.approx(40.0, rel=1e-6)

    def test_perfect_recovery_leaves_only_adversarial(self):
        target = torch.rand(1, 3, 32, 32)
        disc = make_image_discriminator()
        emb = FrozenEmbedding(0)
        with torch.no_grad():
            d_out = disc(target)
        losses = stage2_loss(target, target.clone(), d_out, d_out, emb)
        assert float(losses["l1"]) == 0.0
        assert float(losses["perceptual"]) == 0.0
        assert float(losses["style"]) == 0.0
        assert float(losses["total"]) == pytest.approx(
            0.1 * float(losses["adversarial"]), rel=1e-6)
