"""Text-command mask lookup: file-backed, external HTTP, and null providers.

A locator turns (image, text command) into a binary mask marking the objects
the command names.  Commands are normalized (lowercase, collapsed whitespace)
and addressed by a short hash, so the same wording always resolves to the
same mask.  ``serve_stub_locator`` runs a small HTTP server that answers the
wire protocol from a directory of prepared masks, which makes the external
path testable offline.
"""

from __future__ import annotations

import hashlib
import io
import re
import threading
from dataclasses import dataclass
from email import message_from_bytes
from email.message import Message
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import requests
from PIL import Image as PILImage

__all__ = [
    "Mask",
    "LocatorError",
    "CommandError",
    "MaskNotFoundError",
    "MaskFormatError",
    "TransportError",
    "normalize_command",
    "command_key",
    "mask_filename",
    "NullLocator",
    "FileLocator",
    "HttpLocator",
    "locate",
    "serve_stub_locator",
    "start_stub_locator",
]


class LocatorError(RuntimeError):
    """Base class for mask lookup failures."""


class CommandError(ValueError):
    """The text command is unusable (empty after normalization)."""


class MaskNotFoundError(LocatorError):
    """The file provider has no mask for (image id, command)."""


class MaskFormatError(LocatorError):
    """A mask was found but is not a valid single-channel binary image."""


class TransportError(LocatorError):
    """The external locator endpoint could not be reached."""


@dataclass(frozen=True)
class Mask:
    """A binary (H, W) mask with the command and provider that produced it."""

    values: np.ndarray
    command: str
    provenance: str

    def __post_init__(self) -> None:
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise ValueError(f"mask must be (H, W), got {vals.shape}")
        if not np.all((vals == 0) | (vals == 1)):
            raise ValueError("mask values must be 0 or 1")

    @property
    def is_empty(self) -> bool:
        return not bool(np.any(self.values != 0))


def normalize_command(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace; empty results are errors."""
    norm = re.sub(r"\s+", " ", text.strip().lower())
    if not norm:
        raise CommandError(f"empty text command: {text!r}")
    return norm


def command_key(text: str) -> str:
    """Stable 16-hex-digit key of a normalized command."""
    norm = normalize_command(text)
    return hashlib.sha256(norm.encode("utf-8")).hexdigest()[:16]


def mask_filename(image_id: str, text: str) -> str:
    """File name a prepared mask must use: ``<image-id>__<command-key>.png``."""
    return f"{image_id}__{command_key(text)}.png"


def _decode_mask_png(data: bytes, expected_shape: tuple[int, int], provenance: str) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as img:
            if img.mode not in ("L", "1", "I", "I;16"):
                raise MaskFormatError(
                    f"{provenance} mask must be single-channel, got mode {img.mode!r}"
                )
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except MaskFormatError:
        raise
    except Exception as exc:
        raise MaskFormatError(f"{provenance} mask is not a decodable image: {exc}") from exc
    if arr.shape != expected_shape:
        raise MaskFormatError(
            f"{provenance} mask shape {arr.shape} does not match image {expected_shape}"
        )
    return (arr >= 0.5).astype(np.uint8)


class NullLocator:
    """Always returns an empty mask (fusion proceeds unmodulated)."""

    kind = "null"

    def locate(self, image: np.ndarray, text: str, image_id: str | None = None) -> Mask:
        shape = image.shape[:2]
        return Mask(np.zeros(shape, dtype=np.uint8), normalize_command(text), "empty")


class FileLocator:
    """Looks up prepared masks in a directory, keyed by image id and command."""

    kind = "file"

    def __init__(self, mask_dir: str | Path) -> None:
        self.mask_dir = Path(mask_dir)

    def locate(self, image: np.ndarray, text: str, image_id: str | None = None) -> Mask:
        if not image_id:
            raise ValueError("the file locator needs an image id")
        path = self.mask_dir / mask_filename(image_id, text)
        if not path.exists():
            raise MaskNotFoundError(f"no mask file {path} for command {text!r}")
        values = _decode_mask_png(path.read_bytes(), image.shape[:2], "file")
        return Mask(values, normalize_command(text), "file")


class HttpLocator:
    """Asks an external endpoint for a mask via multipart POST.

    Request: form fields ``image`` (PNG bytes) and ``text`` (normalized
    command).  Response: a single-channel PNG thresholded at 0.5, or 404 when
    the service finds nothing (treated as an empty mask).
    """

    kind = "external"

    def __init__(self, url: str, timeout: float = 10.0) -> None:
        self.url = url
        self.timeout = timeout

    def locate(self, image: np.ndarray, text: str, image_id: str | None = None) -> Mask:
        norm = normalize_command(text)
        buf = io.BytesIO()
        arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
        PILImage.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(buf, format="PNG")
        try:
            resp = requests.post(
                self.url,
                files={"image": ("image.png", buf.getvalue(), "image/png")},
                data={"text": norm},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"locator endpoint {self.url} unreachable: {exc}") from exc
        if resp.status_code == 404:
            return Mask(np.zeros(image.shape[:2], dtype=np.uint8), norm, "external")
        if resp.status_code != 200:
            raise TransportError(
                f"locator endpoint {self.url} answered status {resp.status_code}"
            )
        values = _decode_mask_png(resp.content, image.shape[:2], "external")
        return Mask(values, norm, "external")


def locate(image: np.ndarray, text: str, provider, image_id: str | None = None) -> Mask:
    """Resolve a text command to a binary mask of the same size as the image."""
    mask = provider.locate(image, text, image_id=image_id)
    if mask.values.shape != image.shape[:2]:
        raise MaskFormatError(
            f"provider returned mask {mask.values.shape} for image {image.shape[:2]}"
        )
    return mask


def _parse_multipart(headers, body: bytes) -> dict[str, bytes]:
    """Extract named form-data parts from a multipart request body."""
    prefix = f"Content-Type: {headers.get('Content-Type', '')}\r\n\r\n".encode()
    msg: Message = message_from_bytes(prefix + body)
    if not msg.is_multipart():
        return {}
    parts: dict[str, bytes] = {}
    for part in msg.get_payload():
        name = part.get_param("name", header="content-disposition")
        if name:
            parts[name] = part.get_payload(decode=True) or b""
    return parts


class _StubLocatorHandler(BaseHTTPRequestHandler):
    mask_dir: Path

    def log_message(self, fmt: str, *args) -> None:  # keep test output quiet
        pass

    def do_POST(self) -> None:
        length = int(self.headers.get("Content-Length", 0))
        parts = _parse_multipart(self.headers, self.rfile.read(length))
        text = parts.get("text", b"").decode("utf-8", errors="replace")
        try:
            key = command_key(text)
        except CommandError:
            self.send_response(400)
            self.end_headers()
            return
        candidates = [self.mask_dir / f"{key}.png"]
        candidates.extend(sorted(self.mask_dir.glob(f"*__{key}.png")))
        for path in candidates:
            if path.exists():
                data = path.read_bytes()
                self.send_response(200)
                self.send_header("Content-Type", "image/png")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)
                return
        self.send_response(404)
        self.end_headers()


def _make_stub_server(mask_dir: str | Path, host: str, port: int) -> ThreadingHTTPServer:
    handler = type(
        "_BoundStubHandler", (_StubLocatorHandler,), {"mask_dir": Path(mask_dir)}
    )
    return ThreadingHTTPServer((host, port), handler)


def serve_stub_locator(mask_dir: str | Path, host: str = "127.0.0.1", port: int = 8765) -> None:
    """Serve masks from a directory over the locator wire protocol (blocking).

    Masks are matched by command key: either ``<key>.png`` or any
    ``<image-id>__<key>.png``.
    """
    server = _make_stub_server(mask_dir, host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def start_stub_locator(
    mask_dir: str | Path, host: str = "127.0.0.1", port: int = 0
) -> tuple[ThreadingHTTPServer, threading.Thread, str]:
    """Start the stub server on a background thread; returns (server, thread, url)."""
    server = _make_stub_server(mask_dir, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://{server.server_address[0]}:{server.server_address[1]}/locate"
    return server, thread, url
