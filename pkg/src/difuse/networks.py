"""Learnable components: conditional denoiser, fusion control, re-modulation.

The denoiser is a UNet split into an explicit encoder and decoder so that the
multi-scale features of two modalities can be merged between the two halves.
``FusionControl`` scores each scale of a feature-bundle pair into convex
per-element weights; ``RemodBlock`` turns a binary mask into multiplicative
coefficients that re-weight the fusion inside the masked region and are
exactly 1 outside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

__all__ = [
    "DenoiserSpec",
    "FeatureBundle",
    "FusionWeights",
    "ModulationCoeffs",
    "ConditionalDenoiser",
    "FusionControl",
    "RemodBlock",
    "sinusoidal_embedding",
    "encode_conditions",
    "fuse_features",
    "fuse_features_fixed",
    "apply_remod",
    "FIXED_RULES",
]

FIXED_RULES = ("max", "add", "mean", "variance")


@dataclass(frozen=True)
class DenoiserSpec:
    """Architecture hyperparameters of a conditional denoiser.

    ``depth`` is the number of 2x downsamplings, so the deepest feature map is
    1/2**depth of the input resolution and inputs must be divisible by that
    factor.  The network consumes latent + condition channels and emits
    2 * latent channels (noise estimate and variance interpolation weight).
    """

    latent_channels: int = 1
    cond_channels: int = 1
    base_width: int = 64
    depth: int = 3
    time_embed_dim: int = 128

    def __post_init__(self) -> None:
        if self.latent_channels < 1 or self.cond_channels < 1:
            raise ValueError("latent and condition channel counts must be >= 1")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_width < 8 or self.base_width % 8 != 0:
            raise ValueError(f"base_width must be a positive multiple of 8, got {self.base_width}")
        if self.time_embed_dim < 8 or self.time_embed_dim % 2 != 0:
            raise ValueError(f"time_embed_dim must be even and >= 8, got {self.time_embed_dim}")

    @property
    def in_channels(self) -> int:
        return self.latent_channels + self.cond_channels

    @property
    def out_channels(self) -> int:
        return 2 * self.latent_channels

    @property
    def widths(self) -> tuple[int, ...]:
        # double per level, capped at 8x the base width
        return tuple(self.base_width * min(2**i, 8) for i in range(self.depth + 1))

    def to_dict(self) -> dict:
        return {
            "latent_channels": self.latent_channels,
            "cond_channels": self.cond_channels,
            "base_width": self.base_width,
            "depth": self.depth,
            "time_embed_dim": self.time_embed_dim,
        }


@dataclass(frozen=True)
class FeatureBundle:
    """Multi-scale features, finest first; the last entry is the bottleneck."""

    features: tuple[Tensor, ...]

    def __post_init__(self) -> None:
        if len(self.features) < 2:
            raise ValueError("a feature bundle needs at least two scales")

    @property
    def num_scales(self) -> int:
        return len(self.features)

    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(f.shape) for f in self.features)


@dataclass(frozen=True)
class FusionWeights:
    """Per-scale convex weight pairs (w_x, w_y), elementwise over features."""

    scales: tuple[tuple[Tensor, Tensor], ...]


@dataclass(frozen=True)
class ModulationCoeffs:
    """Per-scale positive coefficient pairs (kappa_x, kappa_y)."""

    scales: tuple[tuple[Tensor, Tensor], ...]


def sinusoidal_embedding(t: int, dim: int, like: Tensor) -> Tensor:
    """Standard sin/cos position embedding of a scalar step index, shape (1, dim)."""
    half = dim // 2
    scale = math.log(10000.0) / max(half - 1, 1)
    freqs = torch.exp(-scale * torch.arange(half, device=like.device, dtype=like.dtype))
    args = float(t) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)]).reshape(1, dim)


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(8 if channels % 8 == 0 else 1, channels)


class _ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int) -> None:
        super().__init__()
        self.norm1 = _group_norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, cout)
        self.norm2 = _group_norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class _Encoder(nn.Module):
    def __init__(self, spec: DenoiserSpec) -> None:
        super().__init__()
        ted = spec.time_embed_dim
        widths = spec.widths
        self.time_mlp = nn.Sequential(nn.Linear(ted, ted), nn.SiLU(), nn.Linear(ted, ted))
        self.stem = nn.Conv2d(spec.in_channels, widths[0], 3, padding=1)
        self.blocks = nn.ModuleList(
            _ResBlock(widths[i], widths[i], ted) for i in range(spec.depth)
        )
        self.downs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
            for i in range(spec.depth)
        )
        self.bottom = _ResBlock(widths[-1], widths[-1], ted)

    def forward(self, z_t: Tensor, cond: Tensor, raw_emb: Tensor) -> FeatureBundle:
        emb = self.time_mlp(raw_emb)
        h = self.stem(torch.cat([z_t, cond], dim=1))
        feats = []
        for block, down in zip(self.blocks, self.downs):
            h = block(h, emb)
            feats.append(h)
            h = down(h)
        feats.append(self.bottom(h, emb))
        return FeatureBundle(tuple(feats))


class _Decoder(nn.Module):
    def __init__(self, spec: DenoiserSpec) -> None:
        super().__init__()
        ted = spec.time_embed_dim
        widths = spec.widths
        self.time_mlp = nn.Sequential(nn.Linear(ted, ted), nn.SiLU(), nn.Linear(ted, ted))
        self.bottom = _ResBlock(widths[-1], widths[-1], ted)
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 4, stride=2, padding=1)
            for i in reversed(range(spec.depth))
        )
        self.blocks = nn.ModuleList(
            _ResBlock(2 * widths[i], widths[i], ted) for i in reversed(range(spec.depth))
        )
        self.head_norm = _group_norm(widths[0])
        self.head = nn.Conv2d(widths[0], spec.out_channels, 3, padding=1)

    def forward(self, bundle: FeatureBundle, raw_emb: Tensor) -> Tensor:
        emb = self.time_mlp(raw_emb)
        feats = bundle.features
        h = self.bottom(feats[-1], emb)
        for up, block, skip in zip(self.ups, self.blocks, reversed(feats[:-1])):
            h = up(h)
            h = block(torch.cat([h, skip], dim=1), emb)
        return self.head(F.silu(self.head_norm(h)))


class ConditionalDenoiser(nn.Module):
    """Encoder/decoder denoiser predicting (noise, variance weight) from a
    noisy latent and a same-resolution condition image."""

    def __init__(self, spec: DenoiserSpec) -> None:
        super().__init__()
        self.spec = spec
        self.encoder = _Encoder(spec)
        self.decoder = _Decoder(spec)

    def _check_input(self, z_t: Tensor, cond: Tensor) -> None:
        if z_t.ndim != 4 or z_t.shape[1] != self.spec.latent_channels:
            raise ValueError(
                f"latent must be (B, {self.spec.latent_channels}, H, W), got {tuple(z_t.shape)}"
            )
        if cond.ndim != 4 or cond.shape[1] != self.spec.cond_channels:
            raise ValueError(
                f"condition must be (B, {self.spec.cond_channels}, H, W), got {tuple(cond.shape)}"
            )
        if z_t.shape[0] != cond.shape[0] or z_t.shape[2:] != cond.shape[2:]:
            raise ValueError(
                f"latent/condition mismatch: {tuple(z_t.shape)} vs {tuple(cond.shape)}"
            )
        factor = 2**self.spec.depth
        if z_t.shape[2] % factor or z_t.shape[3] % factor:
            raise ValueError(
                f"spatial dims {tuple(z_t.shape[2:])} not divisible by 2**depth = {factor}"
            )

    def encode(self, z_t: Tensor, cond: Tensor, t: int) -> FeatureBundle:
        """Multi-scale features of the noisy latent under one condition image."""
        self._check_input(z_t, cond)
        emb = sinusoidal_embedding(t, self.spec.time_embed_dim, z_t)
        return self.encoder(z_t, cond, emb)

    def decode(self, bundle: FeatureBundle, t: int) -> tuple[Tensor, Tensor]:
        """Decode a (possibly fused) bundle into (eps_pred, v_pred); v in (0, 1)."""
        ref = bundle.features[0]
        emb = sinusoidal_embedding(t, self.spec.time_embed_dim, ref)
        out = self.decoder(bundle, emb)
        c = self.spec.latent_channels
        return out[:, :c], torch.sigmoid(out[:, c:])

    def forward(self, z_t: Tensor, cond: Tensor, t: int) -> tuple[Tensor, Tensor]:
        return self.decode(self.encode(z_t, cond, t), t)


def encode_conditions(
    model: ConditionalDenoiser, z_t: Tensor, conditions: Iterable[Tensor], t: int
) -> tuple[FeatureBundle, ...]:
    """Encode the same latent once per condition image (one bundle each)."""
    bundles = tuple(model.encode(z_t, cond, t) for cond in conditions)
    if not bundles:
        raise ValueError("at least one condition is required")
    return bundles


class _ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 4) -> None:
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels)
        )

    def forward(self, x: Tensor) -> Tensor:
        avg = self.mlp(x.mean(dim=(2, 3)))
        peak = self.mlp(x.amax(dim=(2, 3)))
        return torch.sigmoid(avg + peak)[:, :, None, None]


class _SpatialAttention(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.conv = nn.Conv2d(2, 1, 7, padding=3)

    def forward(self, x: Tensor) -> Tensor:
        stats = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(stats))


class _CBAM(nn.Module):
    """Channel attention followed by spatial attention, both multiplicative."""

    def __init__(self, channels: int, reduction: int = 4) -> None:
        super().__init__()
        self.channel = _ChannelAttention(channels, reduction)
        self.spatial = _SpatialAttention()

    def forward(self, x: Tensor) -> Tensor:
        x = x * self.channel(x)
        return x * self.spatial(x)


class _PairScorer(nn.Module):
    """Scores the (primary, other) feature pair of one scale into logits."""

    def __init__(self, channels: int, reduction: int = 4) -> None:
        super().__init__()
        self.conv_in = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.cbam = _CBAM(channels, reduction)
        self.conv_out = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, primary: Tensor, other: Tensor) -> Tensor:
        h = F.silu(self.conv_in(torch.cat([primary, other], dim=1)))
        return self.conv_out(self.cbam(h))


def _check_bundle_pair(bundle_x: FeatureBundle, bundle_y: FeatureBundle) -> None:
    if bundle_x.shapes() != bundle_y.shapes():
        raise ValueError(
            f"bundle mismatch: {bundle_x.shapes()} vs {bundle_y.shapes()}"
        )


class FusionControl(nn.Module):
    """Per-scale fusion weight generator over a pair of feature bundles.

    One scorer per scale is applied to both orderings of the pair; a softmax
    across the two scores yields elementwise weights that sum to 1.  The
    shared scorer makes the module exactly symmetric: swapping the modalities
    swaps the weights.
    """

    def __init__(self, widths: Sequence[int], reduction: int = 4) -> None:
        super().__init__()
        if len(widths) < 2:
            raise ValueError("fusion control needs at least two scales")
        self.widths = tuple(int(w) for w in widths)
        self.scorers = nn.ModuleList(_PairScorer(w, reduction) for w in self.widths)

    def forward(self, bundle_x: FeatureBundle, bundle_y: FeatureBundle) -> FusionWeights:
        _check_bundle_pair(bundle_x, bundle_y)
        if bundle_x.num_scales != len(self.widths):
            raise ValueError(
                f"expected {len(self.widths)} scales, got {bundle_x.num_scales}"
            )
        scales = []
        for scorer, fx, fy in zip(self.scorers, bundle_x.features, bundle_y.features):
            logits = torch.stack([scorer(fx, fy), scorer(fy, fx)], dim=0)
            weights = torch.softmax(logits, dim=0)
            scales.append((weights[0], weights[1]))
        return FusionWeights(tuple(scales))


def fuse_features(
    bundle_x: FeatureBundle, bundle_y: FeatureBundle, weights: FusionWeights
) -> FeatureBundle:
    """Elementwise convex combination of two bundles under fusion weights."""
    _check_bundle_pair(bundle_x, bundle_y)
    if len(weights.scales) != bundle_x.num_scales:
        raise ValueError("weight scale count does not match the bundles")
    fused = tuple(
        fx * wx + fy * wy
        for fx, fy, (wx, wy) in zip(bundle_x.features, bundle_y.features, weights.scales)
    )
    return FeatureBundle(fused)


def _patch_variance(f: Tensor, size: int = 3) -> Tensor:
    pad = size // 2
    padded = F.pad(f, (pad, pad, pad, pad), mode="replicate")
    mean = F.avg_pool2d(padded, size, stride=1)
    mean_sq = F.avg_pool2d(padded * padded, size, stride=1)
    return torch.clamp(mean_sq - mean * mean, min=0.0)


def fuse_features_fixed(
    bundle_x: FeatureBundle, bundle_y: FeatureBundle, rule: str
) -> FeatureBundle:
    """Learned-weight-free fusion baselines: max, add, mean, patch variance.

    ``max`` is the signed elementwise maximum by value; ``variance`` weights
    each element by its 3x3 local variance share (0.5/0.5 where both local
    variances vanish).
    """
    _check_bundle_pair(bundle_x, bundle_y)
    if rule not in FIXED_RULES:
        raise ValueError(f"unknown fusion rule {rule!r}, expected one of {FIXED_RULES}")
    fused = []
    for fx, fy in zip(bundle_x.features, bundle_y.features):
        if rule == "max":
            fused.append(torch.maximum(fx, fy))
        elif rule == "add":
            fused.append(fx + fy)
        elif rule == "mean":
            fused.append(0.5 * (fx + fy))
        else:
            vx = _patch_variance(fx)
            vy = _patch_variance(fy)
            total = vx + vy
            wx = torch.where(total > 1e-12, vx / torch.clamp(total, min=1e-30), torch.full_like(vx, 0.5))
            fused.append(fx * wx + fy * (1.0 - wx))
    return FeatureBundle(tuple(fused))


class RemodBlock(nn.Module):
    """Turns a binary mask into per-scale, per-modality fusion coefficients.

    The mask is nearest-downsampled to each scale and scored by a small conv
    stack; coefficients are ``1 + m * (softplus(raw) - softplus(0))``, so they
    stay positive, equal exactly 1 wherever the downsampled mask is 0, and
    equal exactly 1 everywhere at initialization (the head conv starts at 0).
    """

    def __init__(self, widths: Sequence[int], hidden: int = 16) -> None:
        super().__init__()
        if len(widths) < 2:
            raise ValueError("remodulation needs at least two scales")
        self.widths = tuple(int(w) for w in widths)
        self.trunks = nn.ModuleList()
        for w in self.widths:
            head = nn.Conv2d(hidden, 2 * w, 3, padding=1)
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
            self.trunks.append(
                nn.Sequential(nn.Conv2d(1, hidden, 3, padding=1), nn.SiLU(), head)
            )

    def forward(self, mask: Tensor) -> ModulationCoeffs:
        if mask.ndim != 4 or mask.shape[1] != 1:
            raise ValueError(f"mask must be (B, 1, H, W), got {tuple(mask.shape)}")
        if not torch.all((mask == 0.0) | (mask == 1.0)):
            raise ValueError("mask must be binary (values 0 or 1)")
        h, w_full = mask.shape[2], mask.shape[3]
        scales = []
        for i, (w, trunk) in enumerate(zip(self.widths, self.trunks)):
            if h % 2**i or w_full % 2**i:
                raise ValueError(f"mask size {(h, w_full)} not divisible by 2**{i}")
            m = mask if i == 0 else F.interpolate(
                mask, size=(h // 2**i, w_full // 2**i), mode="nearest"
            )
            raw = trunk(m)
            shift = F.softplus(raw.new_zeros(()))
            kappa = 1.0 + m * (F.softplus(raw) - shift)
            scales.append((kappa[:, :w], kappa[:, w:]))
        return ModulationCoeffs(tuple(scales))


def apply_remod(
    bundle_x: FeatureBundle,
    bundle_y: FeatureBundle,
    weights: FusionWeights,
    coeffs: ModulationCoeffs,
) -> FeatureBundle:
    """Fuse two bundles with re-modulated weights: fx*wx*kx + fy*wy*ky."""
    _check_bundle_pair(bundle_x, bundle_y)
    if len(coeffs.scales) != bundle_x.num_scales or len(weights.scales) != bundle_x.num_scales:
        raise ValueError("weights/coefficients scale count does not match the bundles")
    fused = tuple(
        fx * wx * kx + fy * wy * ky
        for fx, fy, (wx, wy), (kx, ky) in zip(
            bundle_x.features, bundle_y.features, weights.scales, coeffs.scales
        )
    )
    return FeatureBundle(fused)
