"""Reverse-chain sampler: bitwise determinism, degenerate-fusion identities."""

import numpy as np
import pytest
import torch

from difuse.engine.sampler import (
    FusionRun,
    ModalPair,
    diffuse_fuse,
    fuse_full,
    remodulated_blend,
    restore_batch,
    restore_chroma,
    restore_component,
)
from difuse.networks import FIXED_RULES, ConditionalDenoiser, DenoiserSpec, RemodBlock
from difuse.schedule import LatentState, make_linear_schedule

SCHED8 = make_linear_schedule(8, 1.5e-3, 0.30)


def _gray(seed, n=32):
    return np.random.default_rng(seed).random((n, n))


def _rect_mask(n=32):
    mask = np.zeros((n, n))
    mask[8:20, 10:24] = 1.0
    return mask


class TestModalPair:
    def test_size_property(self):
        pair = ModalPair(x=_gray(0), y=_gray(1))
        assert pair.size == (32, 32)

    def test_color_x_allowed(self):
        ModalPair(x=np.zeros((8, 8, 3)), y=np.zeros((8, 8)))

    def test_color_y_rejected(self):
        with pytest.raises(ValueError, match="y must be grayscale"):
            ModalPair(x=np.zeros((8, 8)), y=np.zeros((8, 8, 3)))

    def test_two_channel_x_rejected(self):
        with pytest.raises(ValueError, match="x must be"):
            ModalPair(x=np.zeros((8, 8, 2)), y=np.zeros((8, 8)))

    def test_unregistered_sizes_rejected(self):
        with pytest.raises(ValueError, match="unregistered"):
            ModalPair(x=np.zeros((8, 8)), y=np.zeros((8, 16)))


class TestFusionRunValidation:
    def test_fcm_and_rule_both_set_rejected(self, tiny_denoiser, tiny_fcm):
        pair = ModalPair(_gray(2), _gray(3))
        with pytest.raises(ValueError, match="exactly one"):
            FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, rule="max")

    def test_neither_fcm_nor_rule_rejected(self, tiny_denoiser):
        pair = ModalPair(_gray(2), _gray(3))
        with pytest.raises(ValueError, match="exactly one"):
            FusionRun(pair, tiny_denoiser, SCHED8)

    def test_unknown_rule_rejected(self, tiny_denoiser):
        pair = ModalPair(_gray(2), _gray(3))
        with pytest.raises(ValueError, match="unknown fusion rule"):
            FusionRun(pair, tiny_denoiser, SCHED8, rule="median")

    def test_mask_shape_checked(self, tiny_denoiser, tiny_fcm):
        pair = ModalPair(_gray(2), _gray(3))
        with pytest.raises(ValueError, match="mask shape"):
            FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, mask=np.zeros((8, 8)))

    def test_mask_binary_checked(self, tiny_denoiser, tiny_fcm):
        pair = ModalPair(_gray(2), _gray(3))
        with pytest.raises(ValueError, match="binary"):
            FusionRun(
                pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, mask=np.full((32, 32), 0.5)
            )

    def test_chroma_seed_defaults_to_seed_plus_one(self, tiny_denoiser, tiny_fcm):
        pair = ModalPair(_gray(2), _gray(3))
        run = FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=41)
        assert run.chroma_seed == 42


class TestRestore:
    def test_deterministic_bitwise(self, tiny_denoiser):
        cond = _gray(4)
        out1 = restore_component(cond, tiny_denoiser, SCHED8, seed=5)
        out2 = restore_component(cond, tiny_denoiser, SCHED8, seed=5)
        np.testing.assert_array_equal(out1, out2)

    def test_output_clamped_and_shaped(self, tiny_denoiser):
        out = restore_component(_gray(6), tiny_denoiser, SCHED8, seed=7)
        assert out.shape == (32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_seed_changes_output(self, tiny_denoiser):
        cond = _gray(8)
        out1 = restore_component(cond, tiny_denoiser, SCHED8, seed=1)
        out2 = restore_component(cond, tiny_denoiser, SCHED8, seed=2)
        assert not np.array_equal(out1, out2)

    def test_batch_shape_preserved(self, tiny_denoiser):
        conds = torch.rand(3, 1, 32, 32, generator=torch.Generator().manual_seed(9))
        out = restore_batch(conds, tiny_denoiser, SCHED8, seed=10)
        assert out.shape == (3, 1, 32, 32)

    def test_multi_draw_deterministic_bitwise(self, tiny_denoiser):
        cond = _gray(30)
        out1 = restore_component(cond, tiny_denoiser, SCHED8, seed=31, draws=3)
        out2 = restore_component(cond, tiny_denoiser, SCHED8, seed=31, draws=3)
        np.testing.assert_array_equal(out1, out2)

    def test_draw_count_changes_output(self, tiny_denoiser):
        cond = _gray(32)
        out1 = restore_component(cond, tiny_denoiser, SCHED8, seed=33, draws=1)
        out2 = restore_component(cond, tiny_denoiser, SCHED8, seed=33, draws=2)
        assert not np.array_equal(out1, out2)

    def test_rejects_nonpositive_draws(self, tiny_denoiser):
        conds = torch.zeros(1, 1, 32, 32)
        with pytest.raises(ValueError, match="draws"):
            restore_batch(conds, tiny_denoiser, SCHED8, seed=1, draws=0)

    def test_chroma_needs_two_channel_model(self, tiny_denoiser):
        with pytest.raises(ValueError, match="2-in/2-out"):
            restore_chroma(np.zeros((32, 32, 2)), tiny_denoiser, SCHED8)

    def test_chroma_rejects_wrong_rank(self, tiny_denoiser):
        with pytest.raises(ValueError, match="chroma must be"):
            restore_chroma(np.zeros((32, 32)), tiny_denoiser, SCHED8)


class TestRemodulatedBlend:
    def _states(self, seed=11):
        gen = torch.Generator().manual_seed(seed)
        base = torch.randn(1, 1, 8, 8, generator=gen)
        mod = torch.randn(1, 1, 8, 8, generator=gen)
        return LatentState(3, base), LatentState(3, mod)

    def test_zero_mask_keeps_base_bitwise(self):
        base, mod = self._states()
        out = remodulated_blend(base, mod, torch.zeros(8, 8))
        assert out.t == 3
        assert torch.equal(out.value, base.value)

    def test_full_mask_takes_modulated_bitwise(self):
        base, mod = self._states(12)
        out = remodulated_blend(base, mod, torch.ones(8, 8))
        assert torch.equal(out.value, mod.value)

    def test_mixed_mask_selects_per_pixel(self):
        base, mod = self._states(13)
        mask = torch.zeros(8, 8)
        mask[:4] = 1.0
        out = remodulated_blend(base, mod, mask)
        assert torch.equal(out.value[..., :4, :], mod.value[..., :4, :])
        assert torch.equal(out.value[..., 4:, :], base.value[..., 4:, :])

    def test_step_mismatch_rejected(self):
        base, mod = self._states(14)
        with pytest.raises(ValueError, match="step mismatch"):
            remodulated_blend(base, LatentState(2, mod.value), torch.ones(8, 8))

    def test_non_binary_mask_rejected(self):
        base, mod = self._states(15)
        with pytest.raises(ValueError, match="binary"):
            remodulated_blend(base, mod, torch.full((8, 8), 0.3))

    def test_shape_mismatch_rejected(self):
        base, mod = self._states(16)
        with pytest.raises(ValueError, match="mask shape"):
            remodulated_blend(base, mod, torch.ones(4, 4))


class TestDiffuseFuse:
    def test_deterministic_bitwise(self, tiny_denoiser, tiny_fcm):
        run = FusionRun(
            ModalPair(_gray(17), _gray(18)), tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=19
        )
        np.testing.assert_array_equal(diffuse_fuse(run), diffuse_fuse(run))

    def test_equal_sources_reduce_to_restoration(self, tiny_denoiser, tiny_fcm):
        """X = Y with a symmetric fusion module walks the single-modality chain."""
        img = _gray(20)
        run = FusionRun(
            ModalPair(img, img), tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=21
        )
        fused = diffuse_fuse(run)
        restored = restore_component(img, tiny_denoiser, SCHED8, seed=21, draws=1)
        np.testing.assert_array_equal(fused, restored)

    def test_equal_sources_fixed_rule_also_reduce(self, tiny_denoiser):
        img = _gray(22)
        run = FusionRun(ModalPair(img, img), tiny_denoiser, SCHED8, rule="mean", seed=23)
        np.testing.assert_array_equal(
            diffuse_fuse(run),
            restore_component(img, tiny_denoiser, SCHED8, seed=23, draws=1),
        )

    def test_seed_changes_output(self, tiny_denoiser, tiny_fcm):
        pair = ModalPair(_gray(24), _gray(25))
        out1 = diffuse_fuse(FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=1))
        out2 = diffuse_fuse(FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=2))
        assert not np.array_equal(out1, out2)

    @pytest.mark.parametrize("rule", FIXED_RULES)
    def test_fixed_rules_run_clean(self, tiny_denoiser, rule):
        run = FusionRun(
            ModalPair(_gray(26), _gray(27)), tiny_denoiser, SCHED8, rule=rule, seed=28
        )
        out = diffuse_fuse(run)
        assert out.shape == (32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_empty_mask_bitwise_equal_to_no_mask(self, tiny_denoiser, tiny_fcm, tiny_remod):
        pair = ModalPair(_gray(29), _gray(30))
        plain = FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=31)
        masked = FusionRun(
            pair, tiny_denoiser, SCHED8, fcm=tiny_fcm,
            remod=tiny_remod, mask=np.zeros((32, 32)), seed=31,
        )
        np.testing.assert_array_equal(diffuse_fuse(plain), diffuse_fuse(masked))

    def test_identity_init_remod_bitwise_equal_to_no_mask(self, tiny_denoiser, tiny_fcm):
        torch.manual_seed(32)
        fresh = RemodBlock(tiny_denoiser.spec.widths, hidden=8)
        fresh.eval()
        pair = ModalPair(_gray(33), _gray(34))
        plain = FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=35)
        modded = FusionRun(
            pair, tiny_denoiser, SCHED8, fcm=tiny_fcm,
            remod=fresh, mask=_rect_mask(), seed=35,
        )
        np.testing.assert_array_equal(diffuse_fuse(plain), diffuse_fuse(modded))

    def test_off_mask_pixels_bitwise_equal_to_base(self, tiny_denoiser, tiny_fcm, tiny_remod):
        """The per-step blend is a read-out: remodulation never leaks off-mask."""
        pair = ModalPair(_gray(36), _gray(37))
        mask = _rect_mask()
        plain = diffuse_fuse(FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=38))
        modded = diffuse_fuse(
            FusionRun(
                pair, tiny_denoiser, SCHED8, fcm=tiny_fcm,
                remod=tiny_remod, mask=mask, seed=38,
            )
        )
        off = mask == 0.0
        np.testing.assert_array_equal(modded[off], plain[off])
        assert not np.array_equal(modded[~off], plain[~off])

    def test_x0_band_is_finite_and_ordered(self, tiny_denoiser, tiny_fcm):
        run = FusionRun(
            ModalPair(_gray(39), _gray(40)), tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=41
        )
        out, (lo, hi) = diffuse_fuse(run, return_x0_band=True)
        assert np.isfinite(lo) and np.isfinite(hi)
        assert lo <= hi
        assert out.shape == (32, 32)


@pytest.fixture(scope="module")
def tiny_chroma_denoiser():
    torch.manual_seed(42)
    spec = DenoiserSpec(
        latent_channels=2, cond_channels=2, base_width=16, depth=2, time_embed_dim=32
    )
    model = ConditionalDenoiser(spec)
    model.eval()
    return model


class TestFuseFull:
    def test_grayscale_replicates_fused_brightness(self, tiny_denoiser, tiny_fcm):
        pair = ModalPair(_gray(43), _gray(44))
        run = FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=45)
        rgb = fuse_full(run)
        fused = diffuse_fuse(run)
        assert rgb.shape == (32, 32, 3)
        for c in range(3):
            np.testing.assert_array_equal(rgb[:, :, c], fused)

    def test_color_requires_chroma_model(self, tiny_denoiser, tiny_fcm):
        rng = np.random.default_rng(46)
        pair = ModalPair(rng.random((32, 32, 3)), rng.random((32, 32)))
        run = FusionRun(pair, tiny_denoiser, SCHED8, fcm=tiny_fcm, seed=47)
        with pytest.raises(ValueError, match="chroma denoiser"):
            fuse_full(run)

    def test_color_pipeline_runs_and_is_deterministic(
        self, tiny_denoiser, tiny_fcm, tiny_chroma_denoiser
    ):
        rng = np.random.default_rng(48)
        pair = ModalPair(rng.random((32, 32, 3)), rng.random((32, 32)))
        run = FusionRun(
            pair, tiny_denoiser, SCHED8, fcm=tiny_fcm,
            chroma_denoiser=tiny_chroma_denoiser, chroma_sched=SCHED8, seed=49,
        )
        out1 = fuse_full(run)
        out2 = fuse_full(run)
        assert out1.shape == (32, 32, 3)
        assert out1.min() >= 0.0 and out1.max() <= 1.0
        np.testing.assert_array_equal(out1, out2)

    def test_chroma_seed_independent_of_brightness_seed(
        self, tiny_denoiser, tiny_fcm, tiny_chroma_denoiser
    ):
        rng = np.random.default_rng(50)
        pair = ModalPair(rng.random((32, 32, 3)), rng.random((32, 32)))
        base = dict(
            pair=pair, denoiser=tiny_denoiser, sched=SCHED8, fcm=tiny_fcm,
            chroma_denoiser=tiny_chroma_denoiser, chroma_sched=SCHED8, seed=51,
        )
        out1 = fuse_full(FusionRun(**base, chroma_seed=100))
        out2 = fuse_full(FusionRun(**base, chroma_seed=200))
        # same brightness trajectory, different chroma draw
        assert not np.array_equal(out1, out2)
