"""Single-file checkpoint container with named tensors and JSON metadata.

Layout: magic ``DFCK``, u16 format version, u64 header length, UTF-8 JSON
header, then raw little-endian tensor payloads.  The header records each
tensor's name, dtype, shape, and byte offset plus free-form metadata (noise
schedule, architecture, config snapshot), so checkpoints round-trip bit for
bit and stay readable across versions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..networks import ConditionalDenoiser, DenoiserSpec, FusionControl, RemodBlock
from ..schedule import NoiseSchedule, make_linear_schedule

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "schedule_meta",
    "schedule_from_meta",
    "denoiser_checkpoint",
    "fcm_checkpoint",
    "remod_checkpoint",
    "build_denoiser",
    "build_fcm",
    "build_remod",
]

_MAGIC = b"DFCK"
_VERSION = 1
_PREFIX = struct.Struct("<4sHQ")


class CheckpointError(RuntimeError):
    """Raised for unreadable or structurally invalid checkpoint files."""


@dataclass
class Checkpoint:
    """Named float tensors plus JSON-serializable metadata."""

    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = _VERSION


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    entries = []
    offset = 0
    payloads = []
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        payloads.append(data)
        offset += len(data)
    header = json.dumps(
        {"format_version": ckpt.version, "meta": ckpt.meta, "tensors": entries}
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_PREFIX.pack(_MAGIC, ckpt.version, len(header)))
        fh.write(header)
        for data in payloads:
            fh.write(data)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"checkpoint {path} is truncated")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != _MAGIC:
        raise CheckpointError(f"checkpoint {path} has wrong magic {magic!r}")
    if version > _VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version}, newest supported is {_VERSION}"
        )
    header_end = _PREFIX.size + header_len
    if len(raw) < header_end:
        raise CheckpointError(f"checkpoint {path} header is truncated")
    try:
        header = json.loads(raw[_PREFIX.size : header_end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} header is not valid JSON") from exc
    tensors: dict[str, np.ndarray] = {}
    base = header_end
    for entry in header["tensors"]:
        start = base + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(raw):
            raise CheckpointError(f"checkpoint {path} payload is truncated")
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(raw[start:stop], dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return Checkpoint(tensors=tensors, meta=header.get("meta", {}), version=version)


def schedule_meta(sched: NoiseSchedule) -> dict:
    return {
        "T": sched.T,
        "beta_start": sched.beta_start,
        "beta_end": sched.beta_end,
        "schedule_kind": sched.kind,
    }


def schedule_from_meta(meta: dict) -> NoiseSchedule:
    if meta.get("schedule_kind", "linear") != "linear":
        raise CheckpointError(f"unsupported schedule kind {meta.get('schedule_kind')!r}")
    return make_linear_schedule(meta["T"], meta["beta_start"], meta["beta_end"])


def _module_tensors(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {
        prefix + name: tensor.detach().cpu().numpy().copy()
        for name, tensor in module.state_dict().items()
    }


def _load_module_tensors(
    module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = ""
) -> None:
    state = {
        name[len(prefix) :]: torch.from_numpy(arr.copy())
        for name, arr in tensors.items()
        if name.startswith(prefix)
    }
    module.load_state_dict(state)


def denoiser_checkpoint(
    model: ConditionalDenoiser,
    sched: NoiseSchedule,
    config_snapshot: dict | None = None,
    extra_meta: dict | None = None,
) -> Checkpoint:
    """Package a denoiser: tensors named encoder.*/decoder.*, schedule in meta."""
    meta = {
        "kind": "denoiser",
        "schedule": schedule_meta(sched),
        "model": model.spec.to_dict(),
        "config": config_snapshot or {},
    }
    meta.update(extra_meta or {})
    return Checkpoint(tensors=_module_tensors(model), meta=meta)


def fcm_checkpoint(
    fcm: FusionControl, config_snapshot: dict | None = None, extra_meta: dict | None = None
) -> Checkpoint:
    meta = {
        "kind": "fcm",
        "widths": list(fcm.widths),
        "config": config_snapshot or {},
    }
    meta.update(extra_meta or {})
    return Checkpoint(tensors=_module_tensors(fcm, "fcm."), meta=meta)


def remod_checkpoint(
    remod: RemodBlock,
    hidden: int,
    config_snapshot: dict | None = None,
    extra_meta: dict | None = None,
) -> Checkpoint:
    meta = {
        "kind": "remod",
        "widths": list(remod.widths),
        "hidden": hidden,
        "config": config_snapshot or {},
    }
    meta.update(extra_meta or {})
    return Checkpoint(tensors=_module_tensors(remod, "remod."), meta=meta)


def _require_kind(ckpt: Checkpoint, kind: str) -> None:
    got = ckpt.meta.get("kind")
    if got != kind:
        raise CheckpointError(f"expected a {kind!r} checkpoint, got {got!r}")


def build_denoiser(ckpt: Checkpoint) -> tuple[ConditionalDenoiser, NoiseSchedule]:
    """Rebuild a denoiser and its schedule from a checkpoint; weights restored exactly."""
    _require_kind(ckpt, "denoiser")
    spec = DenoiserSpec(**ckpt.meta["model"])
    model = ConditionalDenoiser(spec)
    _load_module_tensors(model, ckpt.tensors)
    model.eval()
    return model, schedule_from_meta(ckpt.meta["schedule"])


def build_fcm(ckpt: Checkpoint) -> FusionControl:
    _require_kind(ckpt, "fcm")
    fcm = FusionControl(ckpt.meta["widths"])
    _load_module_tensors(fcm, ckpt.tensors, "fcm.")
    fcm.eval()
    return fcm


def build_remod(ckpt: Checkpoint) -> RemodBlock:
    _require_kind(ckpt, "remod")
    remod = RemodBlock(ckpt.meta["widths"], hidden=ckpt.meta.get("hidden", 16))
    _load_module_tensors(remod, ckpt.tensors, "remod.")
    remod.eval()
    return remod
