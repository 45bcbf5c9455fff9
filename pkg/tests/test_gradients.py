"""Central finite-difference checks of every trainable gradient path.

Each test builds a float64 toy instance (4x4 images, depth-1 denoiser), picks
the parameter entry with the largest analytic gradient, and compares autograd
against (L(p+h) - L(p-h)) / 2h at 1e-3 relative tolerance.
"""

import numpy as np
import pytest
import torch

from difuse.engine.losses import contrast_loss, fcm_loss, hybrid_loss
from difuse.networks import (
    ConditionalDenoiser,
    DenoiserSpec,
    FusionControl,
    RemodBlock,
    apply_remod,
    fuse_features,
)
from difuse.schedule import make_linear_schedule, predict_x0, q_sample

SCHED = make_linear_schedule(4, 0.1, 0.4)
SPEC = DenoiserSpec(latent_channels=1, cond_channels=1, base_width=8, depth=1, time_embed_dim=8)
REL_TOL = 1e-3


def _fd_check(loss_fn, param, h_scale=1e-6):
    """Compare autograd against a central difference at the steepest entry."""
    loss = loss_fn()
    param.grad = None
    loss.backward()
    grad = param.grad.detach().reshape(-1)
    idx = int(torch.argmax(grad.abs()))
    analytic = float(grad[idx])
    assert abs(analytic) > 1e-10, "probe entry has no gradient; test would be vacuous"
    with torch.no_grad():
        flat = param.reshape(-1)
        orig = float(flat[idx])
        h = h_scale * max(1.0, abs(orig))
        flat[idx] = orig + h
        loss_plus = float(loss_fn())
        flat[idx] = orig - h
        loss_minus = float(loss_fn())
        flat[idx] = orig
    fd = (loss_plus - loss_minus) / (2.0 * h)
    rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
    assert rel <= REL_TOL, f"finite difference {fd} vs autograd {analytic} (rel {rel:.2e})"


def _toy_images(seed):
    gen = torch.Generator().manual_seed(seed)
    x0 = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
    cond = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
    eps = torch.randn(1, 1, 4, 4, generator=gen, dtype=torch.float64)
    return x0, cond, eps


class TestHybridLossGradients:
    """The stop-gradient variant is not finite-differentiable by construction,
    so these use detach_mean=False, which makes the loss an ordinary function."""

    @pytest.fixture()
    def model(self):
        torch.manual_seed(0)
        return ConditionalDenoiser(SPEC).double()

    def _loss_fn(self, model, t, seed):
        x0, cond, eps = _toy_images(seed)
        x_t = q_sample(x0, t, eps, SCHED)

        def loss_fn():
            eps_pred, v_pred = model(x_t, cond, t)
            return hybrid_loss(
                eps, eps_pred, x0, x_t, t, v_pred, SCHED,
                lambda_vlb=1e-3, detach_mean=False,
            )

        return loss_fn

    def test_encoder_stem_weight(self, model):
        _fd_check(self._loss_fn(model, t=2, seed=1), model.encoder.stem.weight)

    def test_decoder_head_weight(self, model):
        _fd_check(self._loss_fn(model, t=2, seed=2), model.decoder.head.weight)

    def test_time_mlp_weight(self, model):
        _fd_check(self._loss_fn(model, t=1, seed=3), model.encoder.time_mlp[0].weight)

    def test_t0_nll_path(self, model):
        _fd_check(self._loss_fn(model, t=0, seed=4), model.decoder.head.weight)

    def test_vlb_only_path(self, model):
        """lambda large enough that the KL term dominates the probed gradient."""
        x0, cond, eps = _toy_images(5)
        t = 2
        x_t = q_sample(x0, t, eps, SCHED)

        def loss_fn():
            eps_pred, v_pred = model(x_t, cond, t)
            return hybrid_loss(
                eps, eps_pred, x0, x_t, t, v_pred, SCHED,
                lambda_vlb=10.0, detach_mean=False,
            )

        _fd_check(loss_fn, model.decoder.head.weight)


class TestFcmLossGradients:
    """Gradient flows: scorer params -> weights -> fused bundle -> decoder ->
    predicted clean image -> fusion loss; the denoiser stays frozen."""

    @pytest.fixture()
    def frozen_model(self):
        torch.manual_seed(6)
        model = ConditionalDenoiser(SPEC).double()
        model.requires_grad_(False)
        return model

    @pytest.fixture()
    def fcm(self):
        torch.manual_seed(7)
        return FusionControl(SPEC.widths).double()

    def _loss_fn(self, frozen_model, fcm, seed):
        gen = torch.Generator().manual_seed(seed)
        xb = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
        y = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
        eps = torch.randn(1, 1, 4, 4, generator=gen, dtype=torch.float64)
        t = 1
        anchor = torch.where(xb.abs() >= y.abs(), xb, y)
        z_t = q_sample(anchor, t, eps, SCHED)
        with torch.no_grad():
            bx = frozen_model.encode(z_t, xb, t)
            by = frozen_model.encode(z_t, y, t)

        def loss_fn():
            weights = fcm(bx, by)
            fused = fuse_features(bx, by, weights)
            eps_pred, _ = frozen_model.decode(fused, t)
            x0_hat = predict_x0(z_t, eps_pred, t, SCHED)
            return fcm_loss(x0_hat, xb, y)

        return loss_fn

    def test_scorer_conv_in_weight(self, frozen_model, fcm):
        _fd_check(self._loss_fn(frozen_model, fcm, seed=8), fcm.scorers[0].conv_in.weight)

    def test_scorer_conv_out_weight(self, frozen_model, fcm):
        _fd_check(self._loss_fn(frozen_model, fcm, seed=9), fcm.scorers[1].conv_out.weight)

    def test_cbam_channel_mlp_weight(self, frozen_model, fcm):
        _fd_check(
            self._loss_fn(frozen_model, fcm, seed=10),
            fcm.scorers[0].cbam.channel.mlp[0].weight,
        )

    def test_loss_gradient_wrt_estimate_itself(self):
        """fcm_loss alone, differentiated through its x0_hat argument."""
        gen = torch.Generator().manual_seed(11)
        xb = torch.rand(4, 4, generator=gen, dtype=torch.float64)
        y = torch.rand(4, 4, generator=gen, dtype=torch.float64)
        x0_hat = torch.rand(4, 4, generator=gen, dtype=torch.float64)
        x0_hat.requires_grad_(True)

        def loss_fn():
            return fcm_loss(x0_hat, xb, y)

        _fd_check(loss_fn, x0_hat)


class TestContrastLossGradients:
    """Gradient flows: remod trunk -> coefficients -> re-modulated fusion ->
    decoder -> predicted clean image -> contrast objective."""

    def test_remod_head_weight(self):
        torch.manual_seed(12)
        model = ConditionalDenoiser(SPEC).double()
        model.requires_grad_(False)
        fcm = FusionControl(SPEC.widths).double()
        fcm.requires_grad_(False)
        remod = RemodBlock(SPEC.widths, hidden=4).double()
        with torch.no_grad():
            for p in remod.parameters():
                p.add_(torch.randn_like(p) * 0.2)

        gen = torch.Generator().manual_seed(13)
        xb = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
        y = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
        eps = torch.randn(1, 1, 4, 4, generator=gen, dtype=torch.float64)
        mask = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
        mask[:, :, 1:3, 1:3] = 1.0
        t = 2
        z_t = q_sample(0.5 * (xb + y), t, eps, SCHED)
        with torch.no_grad():
            bx = model.encode(z_t, xb, t)
            by = model.encode(z_t, y, t)
            weights = fcm(bx, by)

        def loss_fn():
            coeffs = remod(mask)
            fused = apply_remod(bx, by, weights, coeffs)
            eps_pred, _ = model.decode(fused, t)
            x0_hat = predict_x0(z_t, eps_pred, t, SCHED)
            return contrast_loss(x0_hat[0, 0], mask[0, 0], penalty_weight=10.0)

        for param in (remod.trunks[0][2].weight, remod.trunks[1][0].weight):
            _fd_check(loss_fn, param)
