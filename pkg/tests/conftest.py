"""Shared fixtures: synthetic scenes, desk-scale schedules, trained desk models.

Trained checkpoints are session-scoped and cached under /tmp between runs
(keyed by a settings tag), so repeated test invocations skip retraining.
Delete /tmp/difuse_test_cache for a fully cold run.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from difuse import degrade
from difuse.engine import (
    DiffusionConfig,
    FcmConfig,
    RemodConfig,
    load_checkpoint,
    save_checkpoint,
    train_fcm,
    train_remod_block,
    train_restoration_diffusion,
)
from difuse.networks import ConditionalDenoiser, DenoiserSpec, FusionControl, RemodBlock
from difuse.schedule import make_linear_schedule

H = W = 32

# Desk-scale diffusion settings: short chain with betas scaled up so the final
# signal fraction is still near zero, tiny UNet, fast-converging learning rate.
DESK_T = 64
DESK_BETA_START = 1.5e-3
DESK_BETA_END = 0.30
DESK_DIFFUSION = dict(
    timesteps=DESK_T,
    beta_start=DESK_BETA_START,
    beta_end=DESK_BETA_END,
    base_width=16,
    depth=2,
    time_embed_dim=64,
    lambda_vlb=1e-3,
    learning_rate=2e-3,
    batch_size=8,
    random_flip=True,
)

_CACHE_DIR = Path("/tmp/difuse_test_cache")


def cached_checkpoint(name: str, settings: dict, builder):
    tag = hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest()[:12]
    path = _CACHE_DIR / f"{name}-{tag}.ckpt"
    if path.exists():
        return load_checkpoint(path)
    ckpt = builder()
    save_checkpoint(path, ckpt)
    return ckpt


# Scene generators live in the package so the demo scripts share them.
from difuse.demo import (  # noqa: E402,F401  (re-exported for test modules)
    SEVERITY_CYCLE,
    add_checker_square,
    add_disk,
    heldout_pairs,
    rect_mask,
    scene_color,
    scene_disks,
    scene_mixed,
    scene_squares,
    smooth_background,
    variant_block,
)


# ------------------------------------------------------- light fixtures


@pytest.fixture(scope="session")
def desk_sched():
    return make_linear_schedule(DESK_T, DESK_BETA_START, DESK_BETA_END)


@pytest.fixture(scope="session")
def tiny_denoiser():
    """Random-init desk denoiser for structural (bitwise) sampler tests."""
    torch.manual_seed(7)
    spec = DenoiserSpec(
        latent_channels=1, cond_channels=1, base_width=16, depth=2, time_embed_dim=32
    )
    model = ConditionalDenoiser(spec)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_fcm(tiny_denoiser):
    torch.manual_seed(8)
    fcm = FusionControl(tiny_denoiser.spec.widths)
    fcm.eval()
    return fcm


@pytest.fixture(scope="session")
def tiny_remod(tiny_denoiser):
    """Random-init remod block, perturbed away from the identity."""
    torch.manual_seed(9)
    remod = RemodBlock(tiny_denoiser.spec.widths, hidden=8)
    with torch.no_grad():
        for p in remod.parameters():
            p.add_(torch.randn(p.shape) * 0.5)
    remod.eval()
    return remod


# ---------------------------------------------------- trained fixtures


@pytest.fixture(scope="session")
def bright_pairs():
    """Brightness training pairs: 64 scenes x 12 degradation variants each."""
    rng = np.random.default_rng(101)
    pairs = []
    for _ in range(64):
        clean = scene_mixed(rng)
        pairs.extend((clean, d) for d in variant_block(clean, rng, 12))
    return pairs


@pytest.fixture(scope="session")
def bright_heldout():
    """32 heavily degraded held-out brightness pairs (disjoint rng stream)."""
    return heldout_pairs(scene_mixed, np.random.default_rng(202), 32, min_mae=0.06)


@pytest.fixture(scope="session")
def brightness_ckpt(bright_pairs):
    settings = dict(DESK_DIFFUSION, steps=2000, seed=11, data="bright-101x64x12")
    cfg = DiffusionConfig(
        **{k: v for k, v in settings.items() if k not in ("data",)}
    )
    return cached_checkpoint(
        "brightness", settings, lambda: train_restoration_diffusion(bright_pairs, cfg)
    )


@pytest.fixture(scope="session")
def chroma_pairs():
    """Chroma training pairs: 48 color scenes x 8 degradation variants each."""
    from difuse import colorspace

    rng = np.random.default_rng(303)
    pairs = []
    for _ in range(48):
        img = scene_color(rng)
        clean_c = colorspace.split(img)[1]
        pairs.append((clean_c, clean_c.copy()))
        for v in range(7):
            spec = degrade.sample_spec(SEVERITY_CYCLE[v % len(SEVERITY_CYCLE)], rng)
            pairs.append((clean_c, colorspace.split(degrade.apply(img, spec))[1]))
    return pairs


@pytest.fixture(scope="session")
def chroma_ckpt(chroma_pairs):
    settings = dict(DESK_DIFFUSION, steps=2000, seed=12, data="chroma-303x48x8")
    cfg = DiffusionConfig(
        **{k: v for k, v in settings.items() if k not in ("data",)}
    )
    return cached_checkpoint(
        "chroma", settings, lambda: train_restoration_diffusion(chroma_pairs, cfg)
    )


@pytest.fixture(scope="session")
def fusion_pairs():
    """Disjoint-content source pairs: X carries disks, Y carries textured squares."""
    rng = np.random.default_rng(404)
    return [(scene_disks(rng), scene_squares(rng)) for _ in range(32)]


@pytest.fixture(scope="session")
def fcm_cfg():
    return FcmConfig(learning_rate=2e-3, batch_size=8, steps=500, seed=13)


@pytest.fixture(scope="session")
def fcm_ckpt(brightness_ckpt, fusion_pairs, fcm_cfg):
    settings = dict(steps=fcm_cfg.steps, seed=fcm_cfg.seed, lr=fcm_cfg.learning_rate,
                    data="fusion-404x32", base="brightness-2000")
    return cached_checkpoint(
        "fcm", settings, lambda: train_fcm(brightness_ckpt, fusion_pairs, fcm_cfg)
    )


@pytest.fixture(scope="session")
def remod_triples(fusion_pairs):
    rng = np.random.default_rng(505)
    return [(xb, y, rect_mask(rng)) for xb, y in fusion_pairs[:24]]


@pytest.fixture(scope="session")
def remod_cfg():
    return RemodConfig(learning_rate=1e-3, batch_size=4, steps=400, seed=14)


@pytest.fixture(scope="session")
def remod_ckpt(brightness_ckpt, fcm_ckpt, remod_triples, remod_cfg):
    settings = dict(steps=remod_cfg.steps, seed=remod_cfg.seed, lr=remod_cfg.learning_rate,
                    clamp=[remod_cfg.x0_clamp_lo, remod_cfg.x0_clamp_hi],
                    t_frac=remod_cfg.t_frac,
                    data="remod-505x24", base="fcm-500-b2000")
    return cached_checkpoint(
        "remod",
        settings,
        lambda: train_remod_block(brightness_ckpt, fcm_ckpt, remod_triples, remod_cfg),
    )
