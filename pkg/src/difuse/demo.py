"""Synthetic desk-scale scenes: piecewise-smooth backgrounds with bright
disks, checkered squares, and color blobs.

These generators back the bundled demo scripts and the test suite.  All
content is drawn from a caller-supplied generator, so datasets are exactly
reproducible from a seed.  Sizes default to the 32x32 desk scale; generators
consume the same number of draws regardless of the requested size.
"""

from __future__ import annotations

import numpy as np

from . import degrade

__all__ = [
    "smooth_background",
    "add_disk",
    "add_checker_square",
    "scene_disks",
    "scene_squares",
    "scene_mixed",
    "scene_color",
    "rect_mask",
    "variant_block",
    "heldout_pairs",
]

SEVERITY_CYCLE = ("light", "medium", "heavy")


def smooth_background(
    rng: np.random.Generator, lo: float = 0.08, hi: float = 0.30, size: int = 32
) -> np.ndarray:
    """Dim planar gradient with random endpoints and orientation mix."""
    a, b = rng.uniform(lo, hi, size=2)
    mix = rng.uniform(0.0, 1.0)
    yy, xx = np.mgrid[0:size, 0:size]
    return a + (b - a) * (mix * yy / (size - 1) + (1.0 - mix) * xx / (size - 1))


def add_disk(img, rng, value=None, radius=None, center=None) -> np.ndarray:
    """Paint a bright disk in place; returns its boolean footprint."""
    h, w = img.shape[:2]
    r = int(radius if radius is not None else rng.integers(4, 8))
    cy = int(center[0]) if center is not None else int(rng.integers(r, h - r))
    cx = int(center[1]) if center is not None else int(rng.integers(r, w - r))
    v = float(value if value is not None else rng.uniform(0.85, 0.98))
    yy, xx = np.mgrid[0:h, 0:w]
    sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[sel] = v
    return sel


def add_checker_square(
    img, rng, size=None, top_left=None, block: int = 3, vals=(0.2, 0.9)
) -> np.ndarray:
    """Paint a checkered square in place; returns its boolean footprint."""
    h, w = img.shape[:2]
    size = int(size if size is not None else rng.integers(12, 17))
    top = int(top_left[0]) if top_left is not None else int(rng.integers(0, h - size + 1))
    left = int(top_left[1]) if top_left is not None else int(rng.integers(0, w - size + 1))
    yy, xx = np.mgrid[0:size, 0:size]
    checker = np.where(((yy // block) + (xx // block)) % 2 == 0, vals[1], vals[0])
    img[top : top + size, left : left + size] = checker
    sel = np.zeros((h, w), dtype=bool)
    sel[top : top + size, left : left + size] = True
    return sel


def scene_disks(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    img = smooth_background(rng, size=size)
    for _ in range(int(rng.integers(1, 3))):
        add_disk(img, rng)
    return img


def scene_squares(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    img = smooth_background(rng, size=size)
    add_checker_square(img, rng)
    return img


def scene_mixed(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    img = smooth_background(rng, size=size)
    add_disk(img, rng)
    if rng.uniform() < 0.5:
        add_checker_square(img, rng, size=int(rng.integers(10, 14)))
    return img


def scene_color(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Three stacked gradients with one saturated color blob."""
    img = np.stack(
        [smooth_background(rng, 0.15, 0.75, size=size) for _ in range(3)], axis=-1
    )
    yy, xx = np.mgrid[0:size, 0:size]
    r = int(rng.integers(5, 9))
    cy, cx = int(rng.integers(r, size - r)), int(rng.integers(r, size - r))
    sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[sel] = rng.uniform(0.2, 1.0, size=3)
    return np.clip(img, 0.0, 1.0)


def rect_mask(
    rng: np.random.Generator, lo: int = 8, hi: int = 15, size: int = 32
) -> np.ndarray:
    """Binary rectangle mask with random extent and placement."""
    mask = np.zeros((size, size), dtype=np.float64)
    mh, mw = int(rng.integers(lo, hi)), int(rng.integers(lo, hi))
    top = int(rng.integers(0, size - mh))
    left = int(rng.integers(0, size - mw))
    mask[top : top + mh, left : left + mw] = 1.0
    return mask


def variant_block(img: np.ndarray, rng: np.random.Generator, n: int) -> list[np.ndarray]:
    """One identity copy plus ``n - 1`` fresh degradations cycling severities.

    Training on many independent degradation draws per scene forces the model
    to learn the conditional inverse rather than memorize one fixed corruption
    per scene; the identity anchor teaches it to pass clean inputs through.
    """
    out = [img.copy()]
    for v in range(n - 1):
        spec = degrade.sample_spec(SEVERITY_CYCLE[v % len(SEVERITY_CYCLE)], rng)
        out.append(degrade.apply(img, spec))
    return out


def heldout_pairs(scene_fn, rng: np.random.Generator, count: int, min_mae: float):
    """Heavily degraded evaluation pairs with a minimum corruption floor.

    Draws whose degraded copy sits within ``min_mae`` of the clean image are
    resampled: restoration quality is unmeasurable against a near-identity
    input, where the comparison reduces to the sampler's noise floor.
    """
    pairs = []
    while len(pairs) < count:
        clean = scene_fn(rng)
        degraded = degrade.apply(clean, degrade.sample_spec("heavy", rng))
        if np.abs(degraded - clean).mean() >= min_mae:
            pairs.append((clean, degraded))
    return pairs
