"""Small HTTP helpers shared by the services and their clients."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Optional
from urllib.parse import parse_qs, urlsplit

import requests

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 5.0


class FetchError(Exception):
    """A resource could not be retrieved (connection failure or non-200)."""


@dataclass
class Fetched:
    content: bytes
    media_type: str
    headers: dict[str, str]


def http_fetch(uri: str, timeout: float = DEFAULT_TIMEOUT) -> Fetched:
    try:
        resp = requests.get(uri, timeout=timeout)
    except requests.RequestException as exc:
        raise FetchError(f"{uri}: {exc}") from exc
    if resp.status_code != 200:
        raise FetchError(f"{uri}: HTTP {resp.status_code}")
    media_type = resp.headers.get("Content-Type", "application/octet-stream")
    return Fetched(resp.content, media_type, dict(resp.headers))


Fetcher = Callable[[str], Fetched]


class ServiceHandler(BaseHTTPRequestHandler):
    """Request handler whose ``server.app`` routes requests.

    Apps implement ``handle(handler, method, path, query)``.
    """

    server_version = "trustyweb/0.1"
    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args: Any) -> None:
        log.debug("%s %s", self.address_string(), format % args)

    def _dispatch(self, method: str) -> None:
        parts = urlsplit(self.path)
        query = {k: v[-1] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
        try:
            self.server.app.handle(self, method, parts.path, query)
        except Exception:
            log.exception("unhandled error serving %s %s", method, self.path)
            self.send_json(500, {"error": "InternalError"})

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def send_bytes(self, status: int, body: bytes, media_type: str, headers: Optional[dict] = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", media_type)
        self.send_header("Content-Length", str(len(body)))
        for key, value in (headers or {}).items():
            self.send_header(key, value)
        self.end_headers()
        self.wfile.write(body)

    def send_json(self, status: int, payload: Any) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_bytes(status, body, "application/json; charset=utf-8")

    def send_error_json(self, status: int, error: str, detail: str = "") -> None:
        self.send_json(status, {"error": error, "detail": detail})


class Service:
    """A ThreadingHTTPServer running an app on a background thread.

    The socket is bound on construction, so ``authority`` is known before an
    app is attached; apps that mint URIs need their own address first.
    """

    def __init__(self, app: Any = None, host: str = "127.0.0.1", port: int = 0) -> None:
        self.httpd = ThreadingHTTPServer((host, port), ServiceHandler)
        self.httpd.daemon_threads = True
        self.httpd.app = app
        self._thread: Optional[threading.Thread] = None

    @property
    def authority(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"{host}:{port}"

    @property
    def url(self) -> str:
        return f"http://{self.authority}"

    def start(self) -> "Service":
        if self._thread is not None:
            return self
        self._thread = threading.Thread(target=self.httpd.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "Service":
        return self.start()

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def parse_listen(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)
