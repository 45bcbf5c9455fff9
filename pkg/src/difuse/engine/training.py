"""Training loops for the three learnable components.

All loops draw batches, step indices, and noise from one ``torch.Generator``
seeded from the config, and initialize weights under ``torch.manual_seed``,
so a fixed config yields an identical loss trajectory run to run.  Loops
return finished :class:`Checkpoint` objects with the loss history in their
metadata.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from ..networks import (
    ConditionalDenoiser,
    DenoiserSpec,
    FusionControl,
    RemodBlock,
    apply_remod,
    fuse_features,
    fuse_features_fixed,
    FIXED_RULES,
)
from ..schedule import (
    NoiseSchedule,
    from_model_range,
    make_linear_schedule,
    predict_x0,
    q_sample,
    to_model_range,
)
from .checkpoint import (
    Checkpoint,
    denoiser_checkpoint,
    fcm_checkpoint,
    remod_checkpoint,
    save_checkpoint,
)
from .config import DiffusionConfig, FcmConfig, RemodConfig, TrainingConfig
from .losses import contrast_loss, fcm_loss, hybrid_loss, signed_absmax

__all__ = [
    "train_restoration_diffusion",
    "train_fcm",
    "evaluate_fcm_loss",
    "train_remod_block",
]

log = logging.getLogger("difuse")


def _stack_pairs(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[Tensor, Tensor]:
    """Stack (clean, degraded) image pairs into (N, C, H, W) float tensors."""
    if not pairs:
        raise ValueError("dataset is empty")
    cleans, degs = [], []
    channels = None
    for clean, degraded in pairs:
        c = np.asarray(clean, dtype=np.float32)
        d = np.asarray(degraded, dtype=np.float32)
        if c.shape != d.shape:
            raise ValueError(f"pair shape mismatch: {c.shape} vs {d.shape}")
        if c.ndim == 2:
            c, d = c[None], d[None]
        else:
            c, d = c.transpose(2, 0, 1), d.transpose(2, 0, 1)
        if channels is None:
            channels = c.shape[0]
        elif c.shape[0] != channels:
            raise ValueError(
                f"component kind mismatch: expected {channels} channels, got {c.shape[0]}"
            )
        cleans.append(torch.from_numpy(np.ascontiguousarray(c)))
        degs.append(torch.from_numpy(np.ascontiguousarray(d)))
    return torch.stack(cleans), torch.stack(degs)


def _augment(
    clean: Tensor, degraded: Tensor, cfg: TrainingConfig, gen: torch.Generator
) -> tuple[Tensor, Tensor]:
    """Shared random horizontal flip and random crop for a batch."""
    if cfg.random_flip and int(torch.randint(2, (1,), generator=gen)) == 1:
        clean = torch.flip(clean, dims=[-1])
        degraded = torch.flip(degraded, dims=[-1])
    if cfg.random_crop:
        h, w = clean.shape[-2:]
        size = cfg.crop_size
        if size > h or size > w:
            raise ValueError(f"crop_size {size} exceeds image size {(h, w)}")
        top = int(torch.randint(h - size + 1, (1,), generator=gen))
        left = int(torch.randint(w - size + 1, (1,), generator=gen))
        clean = clean[..., top : top + size, left : left + size]
        degraded = degraded[..., top : top + size, left : left + size]
    return clean, degraded


def _loss_history_meta(losses: list[float]) -> dict:
    return {"loss_history": losses, "final_loss": losses[-1] if losses else None}


def train_restoration_diffusion(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    dcfg: DiffusionConfig,
    out_path: str | Path | None = None,
) -> Checkpoint:
    """Train a conditional denoiser on (clean, degraded) component pairs.

    The component kind (brightness = 1 channel, chroma = 2 channels) is taken
    from the data; all pairs must agree.  Each step draws a batch, one shared
    step index, and fresh noise; the model learns to predict the noise and
    the posterior-variance interpolation weight under the hybrid loss.
    """
    from .sampler import component_scale

    clean_all, deg_all = _stack_pairs(pairs)
    channels = clean_all.shape[1]
    scale = component_scale(channels)
    cfg = dcfg.training()
    sched = make_linear_schedule(dcfg.timesteps, dcfg.beta_start, dcfg.beta_end)
    spec = DenoiserSpec(
        latent_channels=channels,
        cond_channels=channels,
        base_width=dcfg.base_width,
        depth=dcfg.depth,
        time_embed_dim=dcfg.time_embed_dim,
    )
    torch.manual_seed(cfg.seed)
    model = ConditionalDenoiser(spec)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    log.info(
        "train-diffusion: %d pairs, %d channels, T=%d, %d steps, lr=%g, seed=%d",
        len(pairs), channels, sched.T, cfg.steps, cfg.learning_rate, cfg.seed,
    )

    losses: list[float] = []
    snapshot = dataclasses.asdict(dcfg)
    for step in range(cfg.steps):
        idx = torch.randint(clean_all.shape[0], (cfg.batch_size,), generator=gen)
        clean, degraded = _augment(clean_all[idx], deg_all[idx], cfg, gen)
        clean, degraded = to_model_range(clean, scale), to_model_range(degraded, scale)
        t = int(torch.randint(sched.T, (1,), generator=gen))
        eps = torch.randn(clean.shape, generator=gen)
        x_t = q_sample(clean, t, eps, sched)
        eps_pred, v_pred = model(x_t, degraded, t)
        loss = hybrid_loss(eps, eps_pred, clean, x_t, t, v_pred, sched, dcfg.lambda_vlb)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if (
            out_path is not None
            and cfg.checkpoint_every
            and (step + 1) % cfg.checkpoint_every == 0
            and step + 1 < cfg.steps
        ):
            ckpt = denoiser_checkpoint(model, sched, snapshot, _loss_history_meta(losses))
            save_checkpoint(out_path, ckpt)

    model.eval()
    ckpt = denoiser_checkpoint(model, sched, snapshot, _loss_history_meta(losses))
    if out_path is not None:
        save_checkpoint(out_path, ckpt)
    return ckpt


def _fcm_batch_loss(
    model: ConditionalDenoiser,
    weights_source,
    xb: Tensor,
    y: Tensor,
    t: int,
    eps: Tensor,
    sched: NoiseSchedule,
    cfg: FcmConfig,
) -> Tensor:
    """Fusion loss of one batch; ``weights_source`` is an FCM module or a rule name.

    The noisy latent is anchored at the loss optimum (the larger-magnitude
    composite of the two sources), so every weighting scheme is scored on the
    same trajectory point.
    """
    anchor = signed_absmax(xb, y)
    z_t = q_sample(to_model_range(anchor), t, eps, sched)
    with torch.no_grad():
        bx = model.encode(z_t, to_model_range(xb), t)
        by = model.encode(z_t, to_model_range(y), t)
    if isinstance(weights_source, str):
        fused = fuse_features_fixed(bx, by, weights_source)
    else:
        fused = fuse_features(bx, by, weights_source(bx, by))
    eps_pred, _ = model.decode(fused, t)
    x0_hat = predict_x0(z_t, eps_pred, t, sched)
    x0_hat = torch.clamp(x0_hat, cfg.x0_clamp_lo, cfg.x0_clamp_hi)
    return fcm_loss(from_model_range(x0_hat), xb, y, cfg.gamma_int, cfg.gamma_grad)


def train_fcm(
    diffusion_ckpt: Checkpoint,
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: FcmConfig,
    out_path: str | Path | None = None,
) -> Checkpoint:
    """Train fusion control against a frozen brightness denoiser.

    ``pairs`` are (x_brightness, y) source pairs; the denoiser weights stay
    fixed and only the per-scale weight scorers learn.
    """
    from .checkpoint import build_denoiser

    model, sched = build_denoiser(diffusion_ckpt)
    for p in model.parameters():
        p.requires_grad_(False)
    xb_all, y_all = _stack_pairs(pairs)
    if xb_all.shape[1] != 1:
        raise ValueError("fusion control trains on single-channel brightness pairs")
    torch.manual_seed(cfg.seed)
    fcm = FusionControl(model.spec.widths)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(fcm.parameters(), lr=cfg.learning_rate)
    log.info(
        "train-fcm: %d pairs, %d steps, lr=%g, seed=%d",
        len(pairs), cfg.steps, cfg.learning_rate, cfg.seed,
    )

    losses: list[float] = []
    for _ in range(cfg.steps):
        idx = torch.randint(xb_all.shape[0], (cfg.batch_size,), generator=gen)
        xb, y = xb_all[idx], y_all[idx]
        t = int(torch.randint(sched.T, (1,), generator=gen))
        eps = torch.randn(xb.shape, generator=gen)
        loss = _fcm_batch_loss(model, fcm, xb, y, t, eps, sched, cfg)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))

    fcm.eval()
    ckpt = fcm_checkpoint(fcm, dataclasses.asdict(cfg), _loss_history_meta(losses))
    if out_path is not None:
        save_checkpoint(out_path, ckpt)
    return ckpt


@torch.no_grad()
def evaluate_fcm_loss(
    diffusion_ckpt: Checkpoint,
    weights_source,
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: FcmConfig,
    draws: int = 32,
    seed: int = 0,
) -> float:
    """Mean fusion loss of a weighting scheme over shared random draws.

    ``weights_source`` is a trained :class:`FusionControl` or one of the
    fixed rule names.  The same seed gives every scheme identical batches,
    step indices, and noise, so results are directly comparable.
    """
    if isinstance(weights_source, str) and weights_source not in FIXED_RULES:
        raise ValueError(f"unknown fusion rule {weights_source!r}")
    from .checkpoint import build_denoiser

    model, sched = build_denoiser(diffusion_ckpt)
    xb_all, y_all = _stack_pairs(pairs)
    gen = torch.Generator().manual_seed(seed)
    total = 0.0
    for _ in range(draws):
        idx = torch.randint(xb_all.shape[0], (cfg.batch_size,), generator=gen)
        xb, y = xb_all[idx], y_all[idx]
        t = int(torch.randint(sched.T, (1,), generator=gen))
        eps = torch.randn(xb.shape, generator=gen)
        total += float(_fcm_batch_loss(model, weights_source, xb, y, t, eps, sched, cfg))
    return total / draws


def train_remod_block(
    diffusion_ckpt: Checkpoint,
    fcm_ckpt: Checkpoint,
    triples: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    cfg: RemodConfig,
    out_path: str | Path | None = None,
) -> Checkpoint:
    """Train the re-modulation block against frozen denoiser and fusion control.

    ``triples`` are (x_brightness, y, mask); the block learns coefficients
    that push the masked region of the fused estimate away from its
    surroundings while staying in range.
    """
    from .checkpoint import build_denoiser, build_fcm

    model, sched = build_denoiser(diffusion_ckpt)
    fcm = build_fcm(fcm_ckpt)
    for p in list(model.parameters()) + list(fcm.parameters()):
        p.requires_grad_(False)
    if not triples:
        raise ValueError("dataset is empty")
    xb_all, y_all = _stack_pairs([(x, y) for x, y, _ in triples])
    masks = torch.stack(
        [torch.from_numpy(np.asarray(m, dtype=np.float32))[None] for _, _, m in triples]
    )
    if not torch.all((masks == 0.0) | (masks == 1.0)):
        raise ValueError("masks must be binary")
    if not torch.any(masks != 0.0):
        raise ValueError("every mask in the dataset is empty")

    torch.manual_seed(cfg.seed)
    remod = RemodBlock(model.spec.widths, hidden=cfg.hidden)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(remod.parameters(), lr=cfg.learning_rate)
    log.info(
        "train-remod: %d triples, %d steps, lr=%g, seed=%d",
        len(triples), cfg.steps, cfg.learning_rate, cfg.seed,
    )

    # Coefficients are fit against estimates from the low-noise tail of the
    # chain: at high t a fixed feature modulation swings the clean-image
    # estimate by orders of magnitude more than the pixel range, so both loss
    # terms see only clamp saturation there and the fit collapses to whatever
    # direction escapes the penalty first.
    t_hi = max(1, round(sched.T * cfg.t_frac))
    losses: list[float] = []
    for _ in range(cfg.steps):
        idx = torch.randint(xb_all.shape[0], (cfg.batch_size,), generator=gen)
        xb, y, mask = xb_all[idx], y_all[idx], masks[idx]
        if not torch.any(mask != 0.0):
            continue
        t = int(torch.randint(t_hi, (1,), generator=gen))
        eps = torch.randn(xb.shape, generator=gen)
        anchor = signed_absmax(xb, y)
        z_t = q_sample(to_model_range(anchor), t, eps, sched)
        with torch.no_grad():
            bx = model.encode(z_t, to_model_range(xb), t)
            by = model.encode(z_t, to_model_range(y), t)
            weights = fcm(bx, by)
        coeffs = remod(mask)
        fused = apply_remod(bx, by, weights, coeffs)
        eps_pred, _ = model.decode(fused, t)
        x0_hat = predict_x0(z_t, eps_pred, t, sched)
        x0_hat = torch.clamp(x0_hat, cfg.x0_clamp_lo, cfg.x0_clamp_hi)
        loss = contrast_loss(from_model_range(x0_hat), mask, cfg.penalty_weight)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))

    remod.eval()
    ckpt = remod_checkpoint(remod, cfg.hidden, dataclasses.asdict(cfg), _loss_history_meta(losses))
    if out_path is not None:
        save_checkpoint(out_path, ckpt)
    return ckpt
