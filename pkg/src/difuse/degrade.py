"""Synthetic composite degradation: color cast, then gamma, then sensor noise.

A :class:`DegradationSpec` pins every operator parameter plus the noise seed,
so applying the same spec to the same image is bit-reproducible.  Stages that
sit at their neutral value are skipped entirely; the all-neutral spec returns
the input unchanged bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import colorspace

__all__ = ["DegradationSpec", "SEVERITIES", "apply", "sample_spec"]

# Per-severity sampling ranges: channel gains, gamma (drawn log-uniform so
# brightening and darkening are symmetric), noise sigma.  Heavy spans the full
# supported range; lighter severities are nested inside it.
SEVERITIES: dict[str, dict[str, tuple[float, float]]] = {
    "light": {"gains": (0.85, 1.15), "gamma": (0.8, 1.25), "sigma": (0.0, 0.05)},
    "medium": {"gains": (0.70, 1.30), "gamma": (0.55, 1.80), "sigma": (0.0, 0.10)},
    "heavy": {"gains": (0.60, 1.40), "gamma": (0.40, 2.50), "sigma": (0.0, 0.15)},
}


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of one composite degradation draw.

    ``cast_gains`` multiply the RGB channels (ignored for grayscale input),
    ``gamma`` exponentiates the brightness channel, ``noise_sigma`` is the
    standard deviation of additive Gaussian noise, and ``seed`` fixes the
    noise draw.
    """

    cast_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gamma: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.cast_gains) != 3 or any(g <= 0.0 for g in self.cast_gains):
            raise ValueError(f"cast gains must be three positives, got {self.cast_gains}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")

    @property
    def is_identity(self) -> bool:
        return (
            all(g == 1.0 for g in self.cast_gains)
            and self.gamma == 1.0
            and self.noise_sigma == 0.0
        )


def apply(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Degrade an image: cast -> gamma -> noise, one clamp to [0, 1] at the end.

    Gamma acts on the brightness channel only for color inputs (chroma is
    carried through), and on the values directly for grayscale input.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")
    if spec.is_identity:
        return arr.copy()
    out = arr.copy()
    color = out.ndim == 3
    if color and any(g != 1.0 for g in spec.cast_gains):
        out = out * np.asarray(spec.cast_gains, dtype=np.float64)
    if spec.gamma != 1.0:
        if color:
            bright, chroma = colorspace.split(out)
            # negative brightness cannot occur: gains are positive
            out = colorspace.merge(np.power(bright, spec.gamma), chroma, clip=False)
        else:
            out = np.power(np.clip(out, 0.0, None), spec.gamma)
    if spec.noise_sigma > 0.0:
        rng = np.random.default_rng(spec.seed)
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def sample_spec(
    severity: str,
    rng: np.random.Generator,
    ranges_by_severity: dict[str, dict[str, tuple[float, float]]] | None = None,
) -> DegradationSpec:
    """Draw a random spec at the given severity; the same rng state gives the same spec."""
    table = ranges_by_severity if ranges_by_severity is not None else SEVERITIES
    if severity not in table:
        raise ValueError(f"unknown severity {severity!r}, expected one of {sorted(table)}")
    ranges = table[severity]
    g_lo, g_hi = ranges["gains"]
    gains = tuple(float(v) for v in rng.uniform(g_lo, g_hi, size=3))
    gm_lo, gm_hi = ranges["gamma"]
    gamma = float(math.exp(rng.uniform(math.log(gm_lo), math.log(gm_hi))))
    s_lo, s_hi = ranges["sigma"]
    sigma = float(rng.uniform(s_lo, s_hi))
    seed = int(rng.integers(0, 2**31 - 1))
    return DegradationSpec(cast_gains=gains, gamma=gamma, noise_sigma=sigma, seed=seed)
