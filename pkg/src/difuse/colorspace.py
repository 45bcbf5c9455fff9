"""Brightness/chrominance separation and stitching (BT.601, full range).

Images are numpy float arrays with values in [0, 1]: color is (H, W, 3) RGB,
grayscale is (H, W).  ``split`` produces a brightness map (H, W) and a chroma
map (H, W, 2) holding (Cb, Cr); ``merge`` inverts it.  The forward transform
is written so that a grayscale image replicated to three channels splits into
exactly the grayscale values with exactly neutral (0.5) chroma, and ``merge``
is the algebraic inverse of ``split`` up to float rounding.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NEUTRAL_CHROMA",
    "to_image",
    "is_color",
    "split",
    "merge",
    "brightness",
]

NEUTRAL_CHROMA = 0.5

# BT.601 luma weights; the blue weight (0.114) enters as 1 - 0.299 - 0.587 so
# that equal channels reproduce the input bit for bit.
_KR = 0.299
_KG = 0.587
_CB_SCALE = 1.772  # 2 * (1 - Kb)
_CR_SCALE = 1.402  # 2 * (1 - Kr)


def to_image(values: np.ndarray) -> np.ndarray:
    """Validate an array as an image: finite, (H, W) or (H, W, 3), clamped to [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")
    if arr.ndim >= 2 and (arr.shape[0] < 1 or arr.shape[1] < 1):
        raise ValueError(f"image must be non-empty, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image values must be finite")
    return np.clip(arr, 0.0, 1.0)


def is_color(img: np.ndarray) -> bool:
    return img.ndim == 3


def split(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an (H, W, 3) RGB image into brightness (H, W) and chroma (H, W, 2)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"split expects (H, W, 3), got {arr.shape}")
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    y = b + _KR * (r - b) + _KG * (g - b)
    cb = (b - y) / _CB_SCALE + 0.5
    cr = (r - y) / _CR_SCALE + 0.5
    return y, np.stack([cb, cr], axis=-1)


def brightness(img: np.ndarray) -> np.ndarray:
    """Brightness map of an image: the luma of color inputs, the image itself if gray."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    return split(arr)[0]


def merge(bright: np.ndarray, chroma: np.ndarray, clip: bool = True) -> np.ndarray:
    """Stitch brightness (H, W) and chroma (H, W, 2) back into an RGB image.

    Exact algebraic inverse of ``split``; with ``clip`` the result is clamped
    to [0, 1] (out-of-gamut combinations land on the gamut boundary).
    """
    y = np.asarray(bright, dtype=np.float64)
    c = np.asarray(chroma, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"brightness must be (H, W), got {y.shape}")
    if c.ndim != 3 or c.shape[2] != 2:
        raise ValueError(f"chroma must be (H, W, 2), got {c.shape}")
    if y.shape != c.shape[:2]:
        raise ValueError(f"size mismatch: brightness {y.shape}, chroma {c.shape[:2]}")
    cb, cr = c[..., 0], c[..., 1]
    r = y + _CR_SCALE * (cr - 0.5)
    b = y + _CB_SCALE * (cb - 0.5)
    g = b + (y - b - _KR * (r - b)) / _KG
    out = np.stack([r, g, b], axis=-1)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out
