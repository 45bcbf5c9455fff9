"""Reverse-diffusion sampling: restoration, in-loop fusion, re-modulation.

Every reverse step encodes the current latent once per source modality,
merges the two feature bundles (learned fusion weights, optionally rescaled
by mask-driven coefficients), and decodes the merged bundle into the noise
and variance estimates that advance the latent.  All randomness comes from a
single ``torch.Generator`` seeded per run, so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .. import colorspace
from ..networks import (
    ConditionalDenoiser,
    FusionControl,
    RemodBlock,
    apply_remod,
    fuse_features,
    fuse_features_fixed,
    FIXED_RULES,
)
from ..schedule import (
    LatentState,
    NoiseSchedule,
    from_model_range,
    predict_x0,
    sample_prev,
    to_model_range,
)

__all__ = [
    "ModalPair",
    "FusionRun",
    "restore_component",
    "restore_batch",
    "restore_chroma",
    "remodulated_blend",
    "diffuse_fuse",
    "fuse_full",
]

# The chain runs in a zero-centered model range: conditions are mapped with
# to_model_range, clean-image estimates are clipped to [-1, 1] inside every
# reverse step (free-running chains drift without the anchor), and outputs
# are mapped back to pixels at the end.  Each component's scale is chosen so
# its plausible values fill the clip interval: brightness spans [0, 1], while
# chroma concentrates near its neutral value and is stretched further to keep
# its signal from being dwarfed by unit noise.
BRIGHTNESS_SCALE = 2.0
CHROMA_SCALE = 12.0
X0_BOUNDS = (-1.0, 1.0)


def component_scale(channels: int) -> float:
    """Model-range scale of a component kind (1 = brightness, 2 = chroma)."""
    return CHROMA_SCALE if channels == 2 else BRIGHTNESS_SCALE


@dataclass(frozen=True)
class ModalPair:
    """A registered source pair: ``x`` color or grayscale, ``y`` grayscale."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x, y = np.asarray(self.x), np.asarray(self.y)
        if y.ndim != 2:
            raise ValueError(f"y must be grayscale (H, W), got {y.shape}")
        if x.ndim not in (2, 3) or (x.ndim == 3 and x.shape[2] != 3):
            raise ValueError(f"x must be (H, W) or (H, W, 3), got {x.shape}")
        if x.shape[:2] != y.shape:
            raise ValueError(f"unregistered pair: x {x.shape[:2]} vs y {y.shape}")

    @property
    def size(self) -> tuple[int, int]:
        return self.y.shape


@dataclass
class FusionRun:
    """Everything one fusion needs: sources, models, seeds, optional mask.

    ``seed`` drives the brightness trajectory (initial latent and per-step z);
    the chroma trajectory uses ``chroma_seed`` (default ``seed + 1``).  Either
    a fusion-control module or a fixed ``rule`` must be given.  A mask plus a
    re-modulation block enable the text-driven second trajectory.
    """

    pair: ModalPair
    denoiser: ConditionalDenoiser
    sched: NoiseSchedule
    fcm: FusionControl | None = None
    rule: str | None = None
    chroma_denoiser: ConditionalDenoiser | None = None
    chroma_sched: NoiseSchedule | None = None
    remod: RemodBlock | None = None
    mask: np.ndarray | None = None
    seed: int = 0
    chroma_seed: int | None = None

    def __post_init__(self) -> None:
        if (self.fcm is None) == (self.rule is None):
            raise ValueError("exactly one of fcm or rule must be set")
        if self.rule is not None and self.rule not in FIXED_RULES:
            raise ValueError(f"unknown fusion rule {self.rule!r}")
        if self.mask is not None:
            mask = np.asarray(self.mask)
            if mask.shape != self.pair.size:
                raise ValueError(
                    f"mask shape {mask.shape} does not match pair {self.pair.size}"
                )
            if not np.all((mask == 0) | (mask == 1)):
                raise ValueError("mask must be binary")
        if self.chroma_seed is None:
            self.chroma_seed = self.seed + 1


def _to_tensor(img: np.ndarray) -> Tensor:
    """(H, W) -> (1, 1, H, W); (H, W, C) -> (1, C, H, W); float32."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr.transpose(2, 0, 1)[None]
    else:
        raise ValueError(f"expected 2D or 3D image, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr))


def _from_tensor(t: Tensor) -> np.ndarray:
    arr = t.detach().cpu().numpy()[0]
    if arr.shape[0] == 1:
        return arr[0].astype(np.float64)
    return arr.transpose(1, 2, 0).astype(np.float64)


@torch.no_grad()
def restore_batch(
    conds: Tensor,
    model: ConditionalDenoiser,
    sched: NoiseSchedule,
    seed: int = 0,
    draws: int = 4,
) -> Tensor:
    """Restore a batch of condition images through the reverse chain.

    Runs ``draws`` independent full trajectories from one generator and
    averages their endpoints: composite degradations leave the absolute
    signal level underdetermined, so single trajectories scatter across
    plausible levels and the average is the lower-error estimate.  Pass
    ``draws=1`` for one raw trajectory.  Output is clamped to [0, 1].
    """
    if draws < 1:
        raise ValueError(f"draws must be >= 1, got {draws}")
    gen = torch.Generator().manual_seed(seed)
    b, _, h, w = conds.shape
    shape = (b, model.spec.latent_channels, h, w)
    scale = component_scale(model.spec.latent_channels)
    conds = to_model_range(conds, scale)
    total = torch.zeros(shape)
    for _ in range(draws):
        z = torch.randn(shape, generator=gen)
        for t in reversed(range(sched.T)):
            eps, v = model(z, conds, t)
            noise = torch.randn(shape, generator=gen) if t >= 1 else torch.zeros(shape)
            z = sample_prev(z, eps, v, t, sched, noise, x0_bounds=X0_BOUNDS)
        total += z
    return torch.clamp(from_model_range(total / draws, scale), 0.0, 1.0)


def restore_component(
    cond: np.ndarray,
    model: ConditionalDenoiser,
    sched: NoiseSchedule,
    seed: int = 0,
    draws: int = 4,
) -> np.ndarray:
    """Restore one degraded component image (grayscale or multi-channel)."""
    return _from_tensor(restore_batch(_to_tensor(cond), model, sched, seed, draws))


def restore_chroma(
    chroma: np.ndarray,
    model: ConditionalDenoiser,
    sched: NoiseSchedule,
    seed: int = 0,
    draws: int = 4,
) -> np.ndarray:
    """Restore a degraded (H, W, 2) chroma map with a 2-channel denoiser."""
    arr = np.asarray(chroma)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"chroma must be (H, W, 2), got {arr.shape}")
    if model.spec.latent_channels != 2 or model.spec.cond_channels != 2:
        raise ValueError("chroma restoration needs a 2-in/2-out denoiser")
    return restore_component(arr, model, sched, seed, draws)


def remodulated_blend(base: LatentState, modulated: LatentState, mask: Tensor) -> LatentState:
    """Blend two same-step latents: modulated inside the mask, base outside.

    For binary masks this equals (1 - M) * base + M * modulated, computed by
    selection so off-mask elements keep the base latent bit for bit.
    """
    if base.t != modulated.t:
        raise ValueError(f"step mismatch: base t={base.t}, modulated t={modulated.t}")
    bv, mv = base.value, modulated.value
    if bv.shape != mv.shape:
        raise ValueError(f"latent shape mismatch: {tuple(bv.shape)} vs {tuple(mv.shape)}")
    if mask.shape[-2:] != bv.shape[-2:]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match latents")
    if not torch.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask must be binary")
    return LatentState(t=base.t, value=torch.where(mask > 0.5, mv, bv))


@torch.no_grad()
def diffuse_fuse(run: FusionRun, return_x0_band: bool = False):
    """Fuse the brightness of a source pair inside the reverse chain.

    Returns the fused brightness map in [0, 1] (and, optionally, the range of
    every intermediate clean-image estimate along the trajectory).  When the
    run carries a non-empty mask and a re-modulation block, a second
    trajectory with re-modulated fusion weights advances under the same noise
    draws and the result is blended per step: modulated inside the mask, base
    outside.
    """
    model, sched = run.denoiser, run.sched
    cond_x = to_model_range(_to_tensor(colorspace.brightness(run.pair.x)))
    cond_y = to_model_range(_to_tensor(run.pair.y))
    h, w = run.pair.size

    dual = (
        run.mask is not None
        and run.remod is not None
        and bool(np.any(np.asarray(run.mask) != 0))
    )
    mask_t = _to_tensor(np.asarray(run.mask, dtype=np.float32)) if dual else None
    # Coefficients depend only on the mask: one evaluation serves every step.
    coeffs = run.remod(mask_t) if dual else None

    gen = torch.Generator().manual_seed(run.seed)
    shape = (1, 1, h, w)
    z = torch.randn(shape, generator=gen)
    z_mod = z.clone() if dual else None
    blended = z
    x0_lo, x0_hi = np.inf, -np.inf

    def fuse_step(z_cur: Tensor, t: int, modulate: bool) -> tuple[Tensor, Tensor]:
        bx = model.encode(z_cur, cond_x, t)
        by = model.encode(z_cur, cond_y, t)
        if run.rule is not None:
            fused = fuse_features_fixed(bx, by, run.rule)
        else:
            weights = run.fcm(bx, by)
            if modulate:
                fused = apply_remod(bx, by, weights, coeffs)
            else:
                fused = fuse_features(bx, by, weights)
        return model.decode(fused, t)

    for t in reversed(range(sched.T)):
        noise = torch.randn(shape, generator=gen) if t >= 1 else torch.zeros(shape)
        eps, v = fuse_step(z, t, modulate=False)
        if return_x0_band:
            x0_hat = from_model_range(predict_x0(z, eps, t, sched))
            x0_lo = min(x0_lo, float(x0_hat.min()))
            x0_hi = max(x0_hi, float(x0_hat.max()))
        z = sample_prev(z, eps, v, t, sched, noise, x0_bounds=X0_BOUNDS)
        if dual:
            eps_m, v_m = fuse_step(z_mod, t, modulate=True)
            z_mod = sample_prev(z_mod, eps_m, v_m, t, sched, noise, x0_bounds=X0_BOUNDS)
            blended = remodulated_blend(
                LatentState(t - 1, z), LatentState(t - 1, z_mod), mask_t
            ).value
    out = blended if dual else z
    result = _from_tensor(torch.clamp(from_model_range(out), 0.0, 1.0))
    if return_x0_band:
        return result, (x0_lo, x0_hi)
    return result


def fuse_full(run: FusionRun) -> np.ndarray:
    """Full pipeline: fused brightness plus restored chroma, stitched to RGB.

    Grayscale ``x`` skips chroma diffusion and stitches neutral chroma, so the
    output is the fused brightness replicated to three channels.
    """
    fused_b = diffuse_fuse(run)
    h, w = run.pair.size
    if colorspace.is_color(np.asarray(run.pair.x)):
        if run.chroma_denoiser is None or run.chroma_sched is None:
            raise ValueError("color x requires a chroma denoiser")
        _, chroma = colorspace.split(np.asarray(run.pair.x, dtype=np.float64))
        chroma = restore_chroma(
            chroma, run.chroma_denoiser, run.chroma_sched, run.chroma_seed
        )
    else:
        chroma = np.full((h, w, 2), colorspace.NEUTRAL_CHROMA, dtype=np.float64)
    return colorspace.merge(fused_b, chroma)
