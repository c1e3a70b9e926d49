"""HTTP/1.1 adapter for the gateway (stdlib ``http.server``)."""
from __future__ import annotations

import json
import logging
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from edgeledger.daemon.echo import bind_address
from edgeledger.gateway.app import Gateway

log = logging.getLogger(__name__)

MAX_BODY = 4 * 1024 * 1024


class _Handler(BaseHTTPRequestHandler):
    server: "GatewayServer"
    protocol_version = "HTTP/1.1"

    def _dispatch(self) -> None:
        parts = urllib.parse.urlsplit(self.path)
        query = {k: v[-1] for k, v in urllib.parse.parse_qs(parts.query).items()}
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            self._reply(413, {"httpStatus": 413, "code": "too-large", "message": "body too large"})
            return
        body = self.rfile.read(length) if length else None
        status, payload = self.server.gateway.handle(self.command, urllib.parse.unquote(parts.path), query, body)
        self._reply(status, payload)

    def _reply(self, status: int, payload) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    do_GET = do_POST = do_PUT = do_DELETE = _dispatch

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)


class GatewayServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, gateway: Gateway, listen_address: str = "127.0.0.1:8080"):
        self.gateway = gateway
        super().__init__(bind_address(listen_address), _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="gateway-http", daemon=True)
        thread.start()
        return thread

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
