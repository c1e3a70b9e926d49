"""Credential-checked echo protocol used as the latency probe transport.

Wire format, all integers big-endian:

    client -> server   u32 length | auth token
    server -> client   0x01 accept / 0x00 reject (connection then closed)
    both directions    u32 length | payload      (repeated echo frames)

The server writes every payload frame back unchanged.
"""
from __future__ import annotations

import hashlib
import hmac
import logging
import socket
import socketserver
import struct
import time
from typing import Callable

from edgeledger.contracts.records import parse_address

log = logging.getLogger(__name__)

ACCEPT = b"\x01"
REJECT = b"\x00"
MAX_FRAME = 64 * 1024
_LEN = struct.Struct(">I")


class EchoProtocolError(Exception):
    pass


class AuthRejectedError(EchoProtocolError):
    pass


def auth_token(credential_ref: str) -> bytes:
    """Token a prober presents for a peer whose inventory record names ``credential_ref``."""
    return hashlib.sha256(b"edgeledger-echo-v1\x00" + credential_ref.encode("utf-8")).digest()


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise EchoProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def write_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_FRAME:
        raise EchoProtocolError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME}")
    sock.sendall(_LEN.pack(len(payload)) + payload)


def read_frame(sock: socket.socket) -> bytes | None:
    """Next frame, or None on a clean close before a new frame starts."""
    first = sock.recv(_LEN.size)
    if not first:
        return None
    header = first if len(first) == _LEN.size else first + _recv_exact(sock, _LEN.size - len(first))
    (size,) = _LEN.unpack(header)
    if size > MAX_FRAME:
        raise EchoProtocolError(f"frame of {size} bytes exceeds {MAX_FRAME}")
    return _recv_exact(sock, size) if size else b""


def bind_address(listen_address: str) -> tuple[str, int]:
    """Like parse_address but port 0 (pick a free port) is allowed."""
    host, _, port = listen_address.rpartition(":")
    if port == "0":
        return host or "127.0.0.1", 0
    return parse_address(listen_address)


# Seconds to hold each reply; None means drop the connection instead of replying.
ReplyDelay = Callable[[], "float | None"]


class _EchoHandler(socketserver.BaseRequestHandler):
    server: "EchoServer"

    def handle(self) -> None:
        sock: socket.socket = self.request
        sock.settimeout(self.server.io_timeout)
        try:
            token = read_frame(sock)
            if token is None or not hmac.compare_digest(token, self.server.token):
                sock.sendall(REJECT)
                log.info("rejected echo client %s", self.client_address)
                return
            sock.sendall(ACCEPT)
            while True:
                payload = read_frame(sock)
                if payload is None:
                    return
                if self.server.reply_delay is not None:
                    delay = self.server.reply_delay()
                    if delay is None:
                        return
                    if delay > 0:
                        self.server.sleep(delay)
                write_frame(sock, payload)
        except (OSError, EchoProtocolError) as exc:
            log.debug("echo session with %s ended: %s", self.client_address, exc)


class EchoServer(socketserver.ThreadingTCPServer):
    """Threaded echo peer; ``reply_delay`` injects link latency before each reply."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        listen_address: str,
        credential_ref: str,
        *,
        reply_delay: ReplyDelay | None = None,
        io_timeout: float = 30.0,
        sleep: Callable[[float], None] | None = None,
    ):
        host, port = bind_address(listen_address)
        self.token = auth_token(credential_ref)
        self.reply_delay = reply_delay
        self.io_timeout = io_timeout
        self.sleep = sleep or time.sleep
        super().__init__((host, port), _EchoHandler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def serve_echo(listen_address: str, credential_ref: str, *, reply_delay: ReplyDelay | None = None) -> None:
    """Answer probes until the process is interrupted."""
    with EchoServer(listen_address, credential_ref, reply_delay=reply_delay) as server:
        log.info("echo peer listening on %s", server.address)
        server.serve_forever()


class EchoSession:
    def __init__(self, sock: socket.socket):
        self._sock = sock

    def echo(self, payload: str) -> str:
        write_frame(self._sock, payload.encode("utf-8"))
        reply = read_frame(self._sock)
        if reply is None:
            raise EchoProtocolError("peer closed without replying")
        return reply.decode("utf-8", errors="replace")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TcpConnector:
    """Opens authenticated echo sessions over TCP.

    ``address_map`` rewrites inventory addresses to reachable ones (used when
    several virtual links share one host).
    """

    def __init__(self, address_map: dict[str, str] | None = None):
        self.address_map = dict(address_map or {})

    def open(self, address: str, credential_ref: str, timeout: float) -> EchoSession:
        host, port = parse_address(self.address_map.get(address, address))
        sock = socket.create_connection((host, port), timeout=timeout)
        try:
            sock.settimeout(timeout)
            write_frame(sock, auth_token(credential_ref))
            verdict = _recv_exact(sock, 1)
            if verdict != ACCEPT:
                raise AuthRejectedError(f"{address} rejected the credential")
        except BaseException:
            sock.close()
            raise
        return EchoSession(sock)
