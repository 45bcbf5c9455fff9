"""Fusion quality metrics: entropy, gradient, contrast, difference correlation, VIF.

All metrics take float images with values in [0, 1]; color inputs are reduced
to the brightness channel first.  Entropy quantizes to 256 bins; the gradient
and contrast measures are computed on the 0-255 scale.  ``report`` bundles the
five numbers for one fused/source triple and ``evaluate_directory`` writes a
CSV over a folder of triples with a trailing mean row.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from . import colorspace

__all__ = [
    "MetricReport",
    "entropy",
    "average_gradient",
    "standard_deviation",
    "sum_of_correlation_differences",
    "visual_information_fidelity",
    "report",
    "evaluate_directory",
]

_VIF_NOISE_VAR = 2.0
_VIF_SCALES = 4
_EPS = 1e-10


@dataclass(frozen=True)
class MetricReport:
    """The five fusion metrics for one fused image against its two sources."""

    en: float
    ag: float
    sd: float
    scd: float
    vif: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _as_gray(img: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = colorspace.brightness(arr)
    if arr.ndim != 2:
        raise ValueError(f"{what}: expected an image, got shape {arr.shape}")
    return arr


def entropy(img: np.ndarray) -> float:
    """Shannon entropy in bits over a 256-bin histogram of [0, 1] -> [0, 255]."""
    arr = _as_gray(img, "entropy")
    levels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.int64)
    counts = np.bincount(levels.ravel(), minlength=256)
    p = counts[counts > 0] / levels.size
    return float(-np.sum(p * np.log2(p)))


def average_gradient(img: np.ndarray) -> float:
    """Mean RMS of forward differences on the 0-255 scale over the (H-1, W-1) interior."""
    arr = _as_gray(img, "average_gradient") * 255.0
    h, w = arr.shape
    if h < 2 or w < 2:
        raise ValueError(f"average_gradient needs at least 2x2, got {arr.shape}")
    gx = arr[:, 1:] - arr[:, :-1]
    gy = arr[1:, :] - arr[:-1, :]
    gx = gx[: h - 1, :]
    gy = gy[:, : w - 1]
    return float(np.mean(np.sqrt((gx**2 + gy**2) / 2.0)))


def standard_deviation(img: np.ndarray) -> float:
    """Population standard deviation on the 0-255 scale."""
    arr = _as_gray(img, "standard_deviation") * 255.0
    return float(np.std(arr))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    # A constant operand has no direction to correlate with: define the result as 0.
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return 0.0
    ac = a - a.mean()
    bc = b - b.mean()
    denom = math.sqrt(float(np.sum(ac**2)) * float(np.sum(bc**2)))
    if denom == 0.0:
        return 0.0
    return float(np.sum(ac * bc)) / denom


def sum_of_correlation_differences(
    fused: np.ndarray, x: np.ndarray, y: np.ndarray
) -> float:
    """corr(fused - y, x) + corr(fused - x, y), with constant operands scoring 0."""
    f = _as_gray(fused, "scd")
    xa = _as_gray(x, "scd")
    ya = _as_gray(y, "scd")
    if f.shape != xa.shape or f.shape != ya.shape:
        raise ValueError(f"scd: size mismatch {f.shape} / {xa.shape} / {ya.shape}")
    return _pearson(f - ya, xa) + _pearson(f - xa, ya)


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    half = (n - 1) / 2.0
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
    win = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return win / win.sum()


def _vif_pair(ref: np.ndarray, dist: np.ndarray) -> float:
    """Pixel-domain VIF of ``dist`` against reference ``ref`` (0-255 scale).

    Four dyadic scales with Gaussian windows of size 2**(5 - s) + 1; each
    scale contributes the ratio of preserved to available information and the
    scales are averaged uniformly.  A scale with no reference information
    contributes 0.
    """
    ratios = []
    for scale in range(1, _VIF_SCALES + 1):
        n = 2 ** (_VIF_SCALES - scale + 1) + 1
        win = _gaussian_window(n, n / 5.0)
        if scale > 1:
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        if min(ref.shape) < n:
            raise ValueError(
                f"image too small for VIF scale {scale}: {ref.shape} vs window {n}"
            )
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        var1 = convolve2d(ref * ref, win, mode="valid") - mu1**2
        var2 = convolve2d(dist * dist, win, mode="valid") - mu2**2
        cov = convolve2d(ref * dist, win, mode="valid") - mu1 * mu2
        var1 = np.maximum(var1, 0.0)
        var2 = np.maximum(var2, 0.0)

        g = cov / (var1 + _EPS)
        noise = var2 - g * cov
        g = np.where(var1 < _EPS, 0.0, g)
        noise = np.where(var1 < _EPS, var2, noise)
        noise = np.where(var2 < _EPS, 0.0, noise)
        g = np.where(var2 < _EPS, 0.0, g)
        noise = np.where(g < 0.0, var2, noise)
        g = np.maximum(g, 0.0)
        noise = np.maximum(noise, _EPS)

        num = np.sum(np.log10(1.0 + g**2 * var1 / (noise + _VIF_NOISE_VAR)))
        den = np.sum(np.log10(1.0 + var1 / _VIF_NOISE_VAR))
        ratios.append(float(num / den) if den > 0.0 else 0.0)
    return float(np.mean(ratios))


def visual_information_fidelity(
    fused: np.ndarray, x: np.ndarray, y: np.ndarray
) -> float:
    """Mean of the VIF of the fused image against each source."""
    f = _as_gray(fused, "vif") * 255.0
    xa = _as_gray(x, "vif") * 255.0
    ya = _as_gray(y, "vif") * 255.0
    if f.shape != xa.shape or f.shape != ya.shape:
        raise ValueError(f"vif: size mismatch {f.shape} / {xa.shape} / {ya.shape}")
    return 0.5 * (_vif_pair(xa, f) + _vif_pair(ya, f))


def report(fused: np.ndarray, x: np.ndarray, y: np.ndarray) -> MetricReport:
    """Compute all five metrics for one fused image and its two sources."""
    return MetricReport(
        en=entropy(fused),
        ag=average_gradient(fused),
        sd=standard_deviation(fused),
        scd=sum_of_correlation_differences(fused, x, y),
        vif=visual_information_fidelity(fused, x, y),
    )


def evaluate_directory(
    fused_dir: str | Path,
    x_dir: str | Path,
    y_dir: str | Path,
    out_csv: str | Path,
    workers: int = 1,
) -> list[tuple[str, MetricReport]]:
    """Score every fused image against same-named sources and write a CSV.

    Rows are sorted by image id; a final ``mean`` row averages each column.
    """
    from . import dataio

    fused_dir, x_dir, y_dir = Path(fused_dir), Path(x_dir), Path(y_dir)
    names = sorted(p.name for p in fused_dir.glob("*.png"))
    if not names:
        raise ValueError(f"no .png images found in {fused_dir}")

    def score(name: str) -> tuple[str, MetricReport]:
        fused = dataio.load_image(fused_dir / name)
        x = dataio.load_image(x_dir / name)
        y = dataio.load_image(y_dir / name)
        return Path(name).stem, report(fused, x, y)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(score, names))
    else:
        rows = [score(n) for n in names]

    columns = [f.name for f in fields(MetricReport)]
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with out_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image"] + columns)
        for name, rep in rows:
            writer.writerow([name] + [f"{getattr(rep, c):.6f}" for c in columns])
        means = [float(np.mean([getattr(rep, c) for _, rep in rows])) for c in columns]
        writer.writerow(["mean"] + [f"{m:.6f}" for m in means])
    return rows
