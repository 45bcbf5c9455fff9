"""Image and dataset-manifest I/O.

Images travel as 8-bit PNGs and are exposed as float arrays in [0, 1]:
grayscale (H, W), color (H, W, 3).  Dataset manifests are JSON-lines files,
one record per source pair with an optional mask path and a split tag.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "ManifestRecord",
    "load_image",
    "save_image",
    "read_manifest",
    "write_manifest",
]


@dataclass(frozen=True)
class ManifestRecord:
    """One dataset entry: registered x/y paths, optional mask, split tag."""

    x_path: str
    y_path: str
    mask_path: str | None = None
    split: str = "train"

    def __post_init__(self) -> None:
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG into a float array in [0, 1]; grayscale stays 2D."""
    with PILImage.open(path) as img:
        if img.mode in ("L", "1", "I", "I;16"):
            arr = np.asarray(img.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path: str | Path, arr: np.ndarray) -> None:
    """Write a float [0, 1] array as an 8-bit PNG."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] not in (1, 3)):
        raise ValueError(f"cannot save array of shape {a.shape} as an image")
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    data = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(data).save(path, format="PNG")


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    """Parse a JSON-lines manifest; blank lines are skipped."""
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if "x_path" not in data or "y_path" not in data:
            raise ValueError(f"{path}:{lineno}: record needs x_path and y_path")
        records.append(ManifestRecord(**data))
    if not records:
        raise ValueError(f"manifest {path} has no records")
    return records


def write_manifest(path: str | Path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in records:
        data = {k: v for k, v in asdict(rec).items() if v is not None}
        lines.append(json.dumps(data))
    path.write_text("\n".join(lines) + "\n")
