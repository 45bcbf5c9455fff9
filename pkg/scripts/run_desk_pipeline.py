#!/usr/bin/env python3
"""Run the full fusion pipeline at desk scale through the command-line verbs.

Steps, all inside --workdir:

  1. generate a synthetic paired dataset (see make_demo_data.py)
  2. write a desk-scale TOML config (short 64-step chain, tiny denoiser)
  3. train the brightness and chroma restoration denoisers
  4. train the fusion control against the frozen brightness denoiser
  5. train the mask-driven re-modulation block
  6. fuse the first --fuse-count pairs; re-fuse pair000 with a text command
  7. score the fused images against their sources into metrics.csv

Defaults finish in a few minutes on a laptop CPU.  The resulting models are
demo-grade; raise --train-steps (and --pairs) for better restoration quality.
"""

from __future__ import annotations

import argparse
import dataclasses
import shlex
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from make_demo_data import build as build_dataset  # noqa: E402

from difuse.cli import run as difuse  # noqa: E402
from difuse.engine import config_to_toml, default_config  # noqa: E402


def desk_config(size: int) -> str:
    """Desk-scale settings: betas scaled up so 64 steps still end near pure noise."""
    cfg = default_config()
    cfg = dataclasses.replace(
        cfg,
        diffusion=dataclasses.replace(
            cfg.diffusion,
            timesteps=64,
            beta_start=1.5e-3,
            beta_end=0.30,
            base_width=16,
            depth=2,
            time_embed_dim=64,
            learning_rate=2e-3,
            batch_size=8,
        ),
        fcm=dataclasses.replace(cfg.fcm, learning_rate=2e-3, batch_size=8),
    )
    return config_to_toml(cfg)


def step(label: str, argv: list[str]) -> None:
    print(f"==> difuse {shlex.join(argv)}", flush=True)
    start = time.perf_counter()
    rc = difuse(argv)
    if rc != 0:
        raise SystemExit(f"step {label!r} failed with exit code {rc}")
    print(f"<== {label} done in {time.perf_counter() - start:.1f}s", flush=True)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="desk_run")
    ap.add_argument("--pairs", type=int, default=24)
    ap.add_argument("--size", type=int, default=64,
                    help="image side; the metric stage needs >= 44")
    ap.add_argument("--train-steps", type=int, default=800)
    ap.add_argument("--fcm-steps", type=int, default=300)
    ap.add_argument("--remod-steps", type=int, default=300)
    ap.add_argument("--fuse-count", type=int, default=4)
    ap.add_argument("--text", default="highlight the target")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    work = Path(args.workdir)
    data = work / "data"
    ckpt = work / "checkpoints"
    fused = work / "fused"
    ckpt.mkdir(parents=True, exist_ok=True)
    fused.mkdir(parents=True, exist_ok=True)

    manifest = build_dataset(data, args.pairs, args.size, args.seed, args.text)
    print(f"dataset ready: {manifest}", flush=True)

    config = work / "desk.toml"
    config.write_text(desk_config(args.size))
    base = ["--config", str(config), "--manifest", str(manifest)]

    step("train brightness", [
        "train-diffusion", *base, "--component", "brightness",
        "--steps", str(args.train_steps), "--out", str(ckpt / "brightness.ckpt"),
    ])
    step("train chroma", [
        "train-diffusion", *base, "--component", "chroma",
        "--steps", str(args.train_steps), "--out", str(ckpt / "chroma.ckpt"),
    ])
    step("train fusion control", [
        "train-fcm", *base, "--diffusion-ckpt", str(ckpt / "brightness.ckpt"),
        "--steps", str(args.fcm_steps), "--out", str(ckpt / "fcm.ckpt"),
    ])
    step("train re-modulation", [
        "train-remod", *base, "--diffusion-ckpt", str(ckpt / "brightness.ckpt"),
        "--fcm-ckpt", str(ckpt / "fcm.ckpt"),
        "--steps", str(args.remod_steps), "--out", str(ckpt / "remod.ckpt"),
    ])

    fuse_base = [
        "fuse", "--config", str(config),
        "--brightness-ckpt", str(ckpt / "brightness.ckpt"),
        "--chroma-ckpt", str(ckpt / "chroma.ckpt"),
        "--fcm-ckpt", str(ckpt / "fcm.ckpt"),
        "--seed", str(args.seed),
    ]
    for k in range(min(args.fuse_count, args.pairs)):
        name = f"pair{k:03d}.png"
        step(f"fuse {name}", fuse_base + [
            "--x", str(data / "x" / name), "--y", str(data / "y" / name),
            "--out", str(fused / name),
        ])
    step("fuse pair000 with text command", fuse_base + [
        "--x", str(data / "x" / "pair000.png"), "--y", str(data / "y" / "pair000.png"),
        "--text", args.text,
        "--remod-ckpt", str(ckpt / "remod.ckpt"),
        "--mask-dir", str(data / "masks"),
        "--out", str(work / "pair000_command.png"),
    ])

    step("evaluate", [
        "evaluate", "--fused-dir", str(fused),
        "--x-dir", str(data / "x"), "--y-dir", str(data / "y"),
        "--out", str(work / "metrics.csv"),
    ])
    print(work / "metrics.csv")
    print((work / "metrics.csv").read_text())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
