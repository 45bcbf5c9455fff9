"""Command-line interface.

Verbs: train-diffusion, train-fcm, train-remod, degrade, fuse, evaluate,
print-config, serve-stub-locator.  Exit codes: 0 success, 1 validation error
(bad arguments or inputs), 2 runtime failure (lookup, transport, corrupt
checkpoint).  Every run logs its resolved configuration and seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import colorspace, dataio, degrade, locate, metrics
from .engine import (
    AppConfig,
    FcmConfig,
    FusionRun,
    ModalPair,
    RemodConfig,
    build_denoiser,
    build_fcm,
    build_remod,
    config_to_toml,
    load_checkpoint,
    load_config,
    resolve_config_path,
    train_fcm,
    train_remod_block,
    train_restoration_diffusion,
    fuse_full,
)
from .engine.checkpoint import CheckpointError
from .networks import FIXED_RULES

log = logging.getLogger("difuse")

_IMAGE_SUFFIX = ".png"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit code 1 instead of argparse's 2
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="TOML config (default: $DIFUSE_CONFIG)")


def build_parser() -> _Parser:
    parser = _Parser(prog="difuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("print-config", parents=[], help="print the resolved configuration")
    _add_config_arg(p)

    p = sub.add_parser("degrade", help="apply random composite degradation to images")
    _add_config_arg(p)
    p.add_argument("--input", required=True, help="source image or directory of PNGs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--severity", default=None, choices=sorted(degrade.SEVERITIES))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-diffusion", help="train a restoration denoiser")
    _add_config_arg(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--component", required=True, choices=("brightness", "chroma"))
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train-fcm", help="train fusion control against a frozen denoiser")
    _add_config_arg(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--diffusion-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train-remod", help="train the mask-driven re-modulation block")
    _add_config_arg(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--diffusion-ckpt", required=True)
    p.add_argument("--fcm-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("fuse", help="fuse a registered source pair")
    _add_config_arg(p)
    p.add_argument("--x", required=True, help="color or grayscale source PNG")
    p.add_argument("--y", required=True, help="grayscale source PNG")
    p.add_argument("--out", required=True, help="fused output PNG")
    p.add_argument("--brightness-ckpt", required=True)
    p.add_argument("--chroma-ckpt", default=None, help="required for color --x")
    p.add_argument("--fcm-ckpt", default=None)
    p.add_argument("--rule", default=None, choices=FIXED_RULES,
                   help="fixed fusion rule instead of a trained fusion control")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--text", default=None, help="text command naming objects to highlight")
    p.add_argument("--remod-ckpt", default=None, help="required with --text")
    p.add_argument("--mask-dir", default=None, help="file-backed mask lookup directory")
    p.add_argument("--locator-url", default=None, help="external locator endpoint")

    p = sub.add_parser("evaluate", help="score fused images against their sources")
    _add_config_arg(p)
    p.add_argument("--fused-dir", required=True)
    p.add_argument("--x-dir", required=True)
    p.add_argument("--y-dir", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("serve-stub-locator", help="serve prepared masks over HTTP")
    _add_config_arg(p)
    p.add_argument("--mask-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)

    return parser


def _load_pairs_from_manifest(path: str, split: str = "train") -> list[dataio.ManifestRecord]:
    records = [r for r in dataio.read_manifest(path) if r.split == split]
    if not records:
        raise ValueError(f"manifest {path} has no {split!r} records")
    return records


def _degraded_component_pairs(
    records: list[dataio.ManifestRecord], component: str, cfg: AppConfig, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Build (clean, degraded) component pairs; degradations are sampled per image."""
    rng = np.random.default_rng(seed)
    severity = cfg.degradation.severity
    ranges = cfg.degradation.ranges()
    pairs = []
    for rec in records:
        x = dataio.load_image(rec.x_path)
        y = dataio.load_image(rec.y_path)
        spec = degrade.sample_spec(severity, rng, ranges)
        if component == "brightness":
            pairs.append((colorspace.brightness(x), colorspace.brightness(degrade.apply(x, spec))))
            spec_y = degrade.sample_spec(severity, rng, ranges)
            pairs.append((y, degrade.apply(y, spec_y)))
        else:
            if not colorspace.is_color(x):
                raise ValueError(f"chroma training needs color x images, got {rec.x_path}")
            clean_c = colorspace.split(x)[1]
            deg_c = colorspace.split(degrade.apply(x, spec))[1]
            pairs.append((clean_c, deg_c))
    return pairs


def _cmd_print_config(args, cfg: AppConfig) -> int:
    sys.stdout.write(config_to_toml(cfg))
    return 0


def _cmd_degrade(args, cfg: AppConfig) -> int:
    src = Path(args.input)
    paths = sorted(src.glob(f"*{_IMAGE_SUFFIX}")) if src.is_dir() else [src]
    if not paths or not all(p.exists() for p in paths):
        raise ValueError(f"no input images at {src}")
    severity = args.severity or cfg.degradation.severity
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out)
    for path in paths:
        spec = degrade.sample_spec(severity, rng, cfg.degradation.ranges())
        img = dataio.load_image(path)
        dataio.save_image(out_dir / path.name, degrade.apply(img, spec))
        log.info("degraded %s: %s", path.name, spec)
    log.info("wrote %d degraded images to %s", len(paths), out_dir)
    return 0


def _cmd_train_diffusion(args, cfg: AppConfig) -> int:
    dcfg = cfg.diffusion
    if args.steps is not None:
        dcfg = dataclasses.replace(dcfg, steps=args.steps)
    if args.seed is not None:
        dcfg = dataclasses.replace(dcfg, seed=args.seed)
    records = _load_pairs_from_manifest(args.manifest)
    pairs = _degraded_component_pairs(records, args.component, cfg, dcfg.seed)
    train_restoration_diffusion(pairs, dcfg, out_path=args.out)
    log.info("saved %s denoiser checkpoint to %s", args.component, args.out)
    return 0


def _cmd_train_fcm(args, cfg: AppConfig) -> int:
    fcfg = cfg.fcm
    if args.steps is not None:
        fcfg = dataclasses.replace(fcfg, steps=args.steps)
    if args.seed is not None:
        fcfg = dataclasses.replace(fcfg, seed=args.seed)
    records = _load_pairs_from_manifest(args.manifest)
    pairs = [
        (colorspace.brightness(dataio.load_image(r.x_path)), dataio.load_image(r.y_path))
        for r in records
    ]
    ckpt = load_checkpoint(args.diffusion_ckpt)
    train_fcm(ckpt, pairs, fcfg, out_path=args.out)
    log.info("saved fusion-control checkpoint to %s", args.out)
    return 0


def _cmd_train_remod(args, cfg: AppConfig) -> int:
    rcfg = cfg.remod
    if args.steps is not None:
        rcfg = dataclasses.replace(rcfg, steps=args.steps)
    if args.seed is not None:
        rcfg = dataclasses.replace(rcfg, seed=args.seed)
    records = _load_pairs_from_manifest(args.manifest)
    triples = []
    for rec in records:
        if not rec.mask_path:
            raise ValueError(f"record for {rec.x_path} has no mask_path")
        mask = (dataio.load_image(rec.mask_path) >= 0.5).astype(np.float64)
        triples.append(
            (
                colorspace.brightness(dataio.load_image(rec.x_path)),
                dataio.load_image(rec.y_path),
                mask,
            )
        )
    train_remod_block(
        load_checkpoint(args.diffusion_ckpt), load_checkpoint(args.fcm_ckpt),
        triples, rcfg, out_path=args.out,
    )
    log.info("saved re-modulation checkpoint to %s", args.out)
    return 0


def _resolve_mask(args, cfg: AppConfig, x: np.ndarray) -> np.ndarray | None:
    if args.text is None:
        return None
    mask_dir = args.mask_dir or (cfg.io.mask_dir or None)
    url = args.locator_url or (cfg.io.locator_url or None)
    if mask_dir:
        provider = locate.FileLocator(mask_dir)
    elif url:
        provider = locate.HttpLocator(url, timeout=cfg.io.locator_timeout)
    else:
        raise ValueError("--text needs --mask-dir or --locator-url (or config [io])")
    image_id = Path(args.x).stem
    mask = locate.locate(x, args.text, provider, image_id=image_id)
    log.info(
        "command %r resolved via %s provider: %d masked pixels",
        mask.command, provider.kind, int(mask.values.sum()),
    )
    return mask.values.astype(np.float64)


def _cmd_fuse(args, cfg: AppConfig) -> int:
    if (args.fcm_ckpt is None) == (args.rule is None):
        raise ValueError("exactly one of --fcm-ckpt or --rule is required")
    if args.text is not None and args.remod_ckpt is None:
        raise ValueError("--text requires --remod-ckpt")
    x = dataio.load_image(args.x)
    y = dataio.load_image(args.y)
    pair = ModalPair(x=x, y=y)
    denoiser, sched = build_denoiser(load_checkpoint(args.brightness_ckpt))
    fcm = build_fcm(load_checkpoint(args.fcm_ckpt)) if args.fcm_ckpt else None
    chroma_denoiser = chroma_sched = None
    if colorspace.is_color(x):
        if args.chroma_ckpt is None:
            raise ValueError("color --x requires --chroma-ckpt")
        chroma_denoiser, chroma_sched = build_denoiser(load_checkpoint(args.chroma_ckpt))
    mask = _resolve_mask(args, cfg, x)
    remod = build_remod(load_checkpoint(args.remod_ckpt)) if args.text else None
    run = FusionRun(
        pair=pair,
        denoiser=denoiser,
        sched=sched,
        fcm=fcm,
        rule=args.rule,
        chroma_denoiser=chroma_denoiser,
        chroma_sched=chroma_sched,
        remod=remod,
        mask=mask,
        seed=args.seed,
    )
    log.info("fuse: seed=%d chroma_seed=%d T=%d rule=%s text=%r",
             run.seed, run.chroma_seed, sched.T, args.rule or "learned", args.text)
    fused = fuse_full(run)
    dataio.save_image(args.out, fused)
    log.info("wrote fused image to %s", args.out)
    return 0


def _cmd_evaluate(args, cfg: AppConfig) -> int:
    rows = metrics.evaluate_directory(
        args.fused_dir, args.x_dir, args.y_dir, args.out, workers=args.workers
    )
    log.info("scored %d images; wrote %s", len(rows), args.out)
    return 0


def _cmd_serve_stub(args, cfg: AppConfig) -> int:
    log.info("serving masks from %s on http://%s:%d", args.mask_dir, args.host, args.port)
    locate.serve_stub_locator(args.mask_dir, host=args.host, port=args.port)
    return 0


_HANDLERS = {
    "print-config": _cmd_print_config,
    "degrade": _cmd_degrade,
    "train-diffusion": _cmd_train_diffusion,
    "train-fcm": _cmd_train_fcm,
    "train-remod": _cmd_train_remod,
    "fuse": _cmd_fuse,
    "evaluate": _cmd_evaluate,
    "serve-stub-locator": _cmd_serve_stub,
}


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        path = resolve_config_path(args.config)
        cfg = load_config(args.config)
        log.info("config: %s", path if path else "defaults")
        return _HANDLERS[args.command](args, cfg)
    except (locate.LocatorError, CheckpointError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # operational failures: I/O, network, decoding
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
