#!/usr/bin/env python3
"""Generate a synthetic paired dataset for the desk-scale pipeline.

Writes, under --out:

    x/pair000.png ...      color source images (gradient + saturated blob)
    y/pair000.png ...      grayscale source images (checkered texture patch)
    masks/pair000.png ...  binary rectangle masks, referenced by the manifest
    masks/pair000__<command-key>.png   the same masks under the prepared-mask
                           naming scheme, so `difuse fuse --text ... --mask-dir`
                           and `difuse serve-stub-locator` work out of the box
    manifest.jsonl         one JSON record per pair (x_path, y_path, mask_path)

The two sources of each pair carry complementary content: x holds the bright
blob, y holds the high-frequency texture.  All randomness comes from --seed.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from difuse import dataio, locate
from difuse.demo import rect_mask, scene_color, scene_squares


def build(out_dir: Path, pairs: int, size: int, seed: int, command: str) -> Path:
    rng = np.random.default_rng(seed)
    records = []
    for k in range(pairs):
        name = f"pair{k:03d}"
        x = scene_color(rng, size=size)
        y = scene_squares(rng, size=size)
        mask = rect_mask(rng, lo=size // 4, hi=size // 2, size=size)
        x_path = out_dir / "x" / f"{name}.png"
        y_path = out_dir / "y" / f"{name}.png"
        mask_path = out_dir / "masks" / f"{name}.png"
        dataio.save_image(x_path, x)
        dataio.save_image(y_path, y)
        dataio.save_image(mask_path, mask)
        dataio.save_image(out_dir / "masks" / locate.mask_filename(name, command), mask)
        records.append(
            dataio.ManifestRecord(
                x_path=str(x_path), y_path=str(y_path), mask_path=str(mask_path)
            )
        )
    manifest = out_dir / "manifest.jsonl"
    dataio.write_manifest(manifest, records)
    return manifest


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output dataset directory")
    ap.add_argument("--pairs", type=int, default=24)
    ap.add_argument("--size", type=int, default=64, help="image side length in pixels")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument(
        "--command",
        default="highlight the target",
        help="text command the prepared locator masks answer",
    )
    args = ap.parse_args(argv)
    if args.pairs < 1 or args.size < 16:
        ap.error("--pairs must be >= 1 and --size >= 16")
    manifest = build(Path(args.out), args.pairs, args.size, args.seed, args.command)
    print(f"wrote {args.pairs} pairs; manifest at {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
