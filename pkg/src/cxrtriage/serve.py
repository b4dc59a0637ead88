"""HTTP inference service.

Thin threaded server over a loaded model: the model parameters are
immutable after load and inference-mode forward passes allocate only
per-request scratch, so concurrent requests are safe. Every 4xx carries a
stable machine-readable ``error`` code; the access log writes one line per
request (method, path, status, latency ms) in text or JSON form.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import sys
import time
from dataclasses import dataclass
from email.parser import BytesParser
from email.policy import default as _email_default_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import models
from .data import decode_image, preprocess_to_u8
from .errors import ConfigError, DecodeError
from .tensor import DTYPE

DEFAULT_BIND = "127.0.0.1:8080"
DEFAULT_MAX_BODY = 10 * 1024 * 1024
_IMAGE_TYPES = ("image/png", "image/jpeg")

log = logging.getLogger("cxrtriage.serve")


@dataclass
class ModelBundle:
    """A loaded network plus the identity data every report carries."""

    net: object
    header: dict
    model_hash: str
    path: str

    @property
    def model_name(self) -> str:
        return self.header["model_name"]

    @property
    def channels(self) -> int:
        return int(self.header["preprocessing"]["channels"])

    @property
    def preprocessing(self) -> dict:
        return dict(self.header["preprocessing"])

    @property
    def classes(self) -> list:
        return list(self.header["classes"])


def load_bundle(path: str, expect_channels: int | None = None) -> ModelBundle:
    net = models.load_model(path, expect_channels=expect_channels)
    header = models.read_header(path)
    return ModelBundle(net=net, header=header,
                       model_hash=models.file_hash(path), path=str(path))


def predict_report(bundle: ModelBundle, image_bytes: bytes) -> dict:
    """Decode, preprocess exactly as training did, and score one image."""
    grid = decode_image(image_bytes)
    sample = preprocess_to_u8(grid, bundle.channels)
    x = (sample.astype(DTYPE) / DTYPE(255))[None, ...]
    probs = bundle.net.forward(x, train=False)[0]
    label_id = int(np.argmax(probs))
    return {
        "probabilities": [float(p) for p in probs],
        "label": bundle.classes[label_id],
        "label_id": label_id,
        "model_name": bundle.model_name,
        "model_hash": bundle.model_hash,
        "preprocessing": bundle.preprocessing,
    }


def _multipart_file_field(content_type: str, body: bytes) -> bytes | None:
    """Extract the part named "file" from a multipart/form-data body."""
    head = (f"Content-Type: {content_type}\r\n"
            f"MIME-Version: 1.0\r\n\r\n").encode("ascii", "ignore")
    try:
        msg = BytesParser(policy=_email_default_policy).parsebytes(head + body)
    except Exception:
        return None
    if not msg.is_multipart():
        return None
    for part in msg.iter_parts():
        if part.get_param("name", header="content-disposition") == "file":
            return part.get_payload(decode=True)
    return None


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "cxrtriage"

    # -- plumbing ------------------------------------------------------

    def _send_json(self, status: int, obj: dict, close: bool = False) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        if close:
            self.send_header("Connection", "close")
            self.close_connection = True
        self.end_headers()
        self.wfile.write(body)

    def _send_error_code(self, status: int, code: str, detail: str,
                         close: bool = False) -> None:
        self._send_json(status, {"error": code, "detail": detail}, close=close)

    def log_request(self, code="-", size="-"):
        t0 = getattr(self, "_t0", None)
        latency_ms = 0.0 if t0 is None else (time.perf_counter() - t0) * 1000.0
        status = code if isinstance(code, int) else getattr(code, "value", 0)
        method = getattr(self, "command", None) or "-"
        path = getattr(self, "path", None) or "-"
        if self.server.log_format == "json":
            log.info(json.dumps({
                "method": method, "path": path,
                "status": int(status), "latency_ms": round(latency_ms, 3),
            }))
        else:
            log.info("%s %s %d %.1fms", method, path, int(status), latency_ms)

    def log_error(self, fmt, *args):  # routed through the same logger
        log.warning(fmt, *args)

    def parse_request(self):
        self._t0 = time.perf_counter()
        return super().parse_request()

    # -- endpoints -----------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        bundle = self.server.bundle
        if self.path == "/api/v1/health":
            self._send_json(200, {"status": "ok",
                                  "model_hash": bundle.model_hash})
            return
        if self.path == "/api/v1/model":
            self._send_json(200, {
                "model_name": bundle.model_name,
                "architecture": bundle.header["arch"],
                "preprocessing": bundle.preprocessing,
                "classes": bundle.classes,
                "model_hash": bundle.model_hash,
            })
            return
        if self.server.ui_dir is not None and self._serve_static():
            return
        self._send_error_code(404, "not_found", f"no route for {self.path}")

    def do_POST(self):
        if self.path != "/api/v1/predict":
            self._send_error_code(404, "not_found", f"no route for {self.path}")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = -1
        if length < 0:
            self._send_error_code(400, "bad_request",
                                  "missing or invalid Content-Length",
                                  close=True)
            return
        if length > self.server.max_body:
            # drain moderate overshoots so the client reads a clean 413;
            # refuse to read absurd bodies and drop the connection instead
            drain_cap = 4 * self.server.max_body
            if length <= drain_cap:
                remaining = length
                while remaining > 0:
                    chunk = self.rfile.read(min(remaining, 1 << 16))
                    if not chunk:
                        break
                    remaining -= len(chunk)
                self._send_error_code(
                    413, "body_too_large",
                    f"body of {length} bytes exceeds limit "
                    f"{self.server.max_body}")
            else:
                self._send_error_code(
                    413, "body_too_large",
                    f"body of {length} bytes exceeds limit "
                    f"{self.server.max_body}", close=True)
            return
        ctype = (self.headers.get("Content-Type") or "").strip()
        base = ctype.split(";")[0].strip().lower()
        body = self.rfile.read(length) if length else b""
        if base in _IMAGE_TYPES:
            payload = body
        elif base == "multipart/form-data":
            payload = _multipart_file_field(ctype, body)
            if payload is None:
                self._send_error_code(
                    400, "decode_failed",
                    'multipart body has no part named "file"')
                return
        else:
            self._send_error_code(
                415, "unsupported_media_type",
                f"content type {base or '(none)'!r} not supported; use "
                f"image/png, image/jpeg, or multipart/form-data")
            return
        try:
            report = predict_report(self.server.bundle, payload)
        except DecodeError as exc:
            self._send_error_code(400, "decode_failed", str(exc))
            return
        except Exception:
            log.exception("prediction failed")
            self._send_error_code(500, "internal", "unexpected server error")
            return
        self._send_json(200, report)

    def _serve_static(self) -> bool:
        rel = self.path.split("?", 1)[0]
        if rel == "/":
            rel = "/index.html"
        root = Path(self.server.ui_dir).resolve()
        target = (root / rel.lstrip("/")).resolve()
        if root not in target.parents and target != root:
            return False
        if not target.is_file():
            return False
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return True


def make_server(model_path: str, bind: str = DEFAULT_BIND,
                max_body_bytes: int = DEFAULT_MAX_BODY,
                log_format: str = "text", ui_dir: str | None = None,
                expect_channels: int | None = None) -> ThreadingHTTPServer:
    """Build (but don't run) the server; tests grab the ephemeral port."""
    if max_body_bytes < 1:
        raise ConfigError(f"max body bytes must be >= 1, got {max_body_bytes}")
    host, _, port_text = bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise ConfigError(f"bind address must be HOST:PORT, got {bind!r}")
    bundle = load_bundle(model_path, expect_channels=expect_channels)
    server = ThreadingHTTPServer((host, int(port_text)), _Handler)
    server.daemon_threads = True
    server.bundle = bundle
    server.max_body = max_body_bytes
    server.log_format = log_format
    server.ui_dir = ui_dir
    return server


def serve(model_path: str, bind: str = DEFAULT_BIND,
          max_body_bytes: int = DEFAULT_MAX_BODY, log_format: str = "text",
          ui_dir: str | None = None,
          expect_channels: int | None = None) -> None:
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    server = make_server(model_path, bind, max_body_bytes, log_format,
                         ui_dir, expect_channels)
    host, port = server.server_address[:2]
    log.info("serving %s on http://%s:%d (max body %d bytes)",
             server.bundle.model_name, host, port, max_body_bytes)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
