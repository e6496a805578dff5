"""HTTP screening service.

A threaded stdlib HTTP server over an immutable model bundle.  Requests
never mutate shared state, so concurrent verdicts match serial execution
exactly.  Shutdown via ``server.shutdown()`` drains in-flight requests.

Endpoints:
    POST /v1/screen   {"text": str} -> verdict JSON
    GET  /healthz     liveness probe
"""

from __future__ import annotations

import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .core import Prompt
from .pipeline import ModelBundle, screen

logger = logging.getLogger("apd.service")


class ScreeningHandler(BaseHTTPRequestHandler):
    bundle: ModelBundle  # set on the server class by make_server

    protocol_version = "HTTP/1.1"

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:  # noqa: N802 (stdlib handler naming)
        if self.path == "/healthz":
            self._send_json(200, {"status": "ok"})
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self) -> None:  # noqa: N802
        if self.path != "/v1/screen":
            self._send_json(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            data = json.loads(raw)
        except (ValueError, json.JSONDecodeError):
            self._send_json(400, {"error": "body must be a JSON object"})
            return
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            self._send_json(400, {"error": "missing string field 'text'"})
            return
        prompt = Prompt.from_text(data["text"])
        if not prompt.tokens:
            self._send_json(422, {"error": "empty prompt"})
            return
        try:
            result = screen(prompt, self.server.bundle)  # type: ignore[attr-defined]
        except Exception as exc:
            logger.error("screen failed: %s", exc)
            self._send_json(500, {"error": str(exc)})
            return
        self._send_json(200, result.to_json_dict(prompt.tokens))

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("%s - %s", self.address_string(), fmt % args)


class ScreeningServer(ThreadingHTTPServer):
    daemon_threads = False  # join handler threads on close: drains in-flight
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], bundle: ModelBundle):
        super().__init__(address, ScreeningHandler)
        self.bundle = bundle


def make_server(bundle: ModelBundle, host: str = "127.0.0.1", port: int = 8080) -> ScreeningServer:
    server = ScreeningServer((host, port), bundle)
    logger.info("screening service listening on %s:%d", *server.server_address[:2])
    return server
