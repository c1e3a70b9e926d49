"""REST surface over the ledger.

``Gateway.handle`` is transport independent: it takes a method, a path, a
query dict and a raw JSON body and returns ``(status, payload)``. The HTTP
server in ``edgeledger.gateway.server`` is a thin adapter around it.
"""
from __future__ import annotations

import json
import logging
import re
import threading
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from edgeledger.clock import SystemClock
from edgeledger.errors import (
    ContractError,
    DuplicateError,
    LedgerUnavailableError,
    NoEligibleServerError,
    NotFoundError,
    ReadOnlyViolationError,
    UnknownOperationError,
    ValidationError,
)
from edgeledger.ledger import Ledger

log = logging.getLogger(__name__)

DEFAULT_WINDOW_MINUTES = 10

READ = "read"
WRITE = "write"


class ApiError(Exception):
    def __init__(self, http_status: int, code: str, message: str):
        super().__init__(message)
        self.http_status = http_status
        self.code = code
        self.message = message

    def to_dict(self) -> dict:
        return {"httpStatus": self.http_status, "code": self.code, "message": self.message}


# most specific first
_ERROR_MAP: list[tuple[type[Exception], int, str]] = [
    (NoEligibleServerError, 404, "no-eligible-node"),
    (NotFoundError, 404, "not-found"),
    (DuplicateError, 409, "duplicate"),
    (ValidationError, 400, "validation"),
    (ContractError, 400, "rejected"),
    (UnknownOperationError, 400, "unknown-operation"),
    (LedgerUnavailableError, 503, "ledger-unavailable"),
    (ReadOnlyViolationError, 500, "read-only-violation"),
]


def api_error_for(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    for cls, status, code in _ERROR_MAP:
        if isinstance(exc, cls):
            return ApiError(status, code, str(exc))
    return ApiError(500, "internal", str(exc))


@dataclass(frozen=True)
class OpTimingStats:
    read_count: int
    read_mean_ms: float | None
    write_count: int
    write_mean_ms: float | None

    def to_dict(self) -> dict:
        return {
            "readCount": self.read_count,
            "readMeanMs": self.read_mean_ms,
            "writeCount": self.write_count,
            "writeMeanMs": self.write_mean_ms,
        }


class TimingRecorder:
    """Running means of request durations, split by read and write."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = {READ: 0, WRITE: 0}
        self._mean = {READ: 0.0, WRITE: 0.0}

    def record(self, kind: str, elapsed_ms: float) -> OpTimingStats:
        if kind not in self._count:
            raise ValueError(f"unknown request kind {kind!r}")
        if elapsed_ms < 0:
            raise ValueError("elapsed time cannot be negative")
        with self._lock:
            self._count[kind] += 1
            self._mean[kind] += (elapsed_ms - self._mean[kind]) / self._count[kind]
            return self._snapshot()

    def snapshot(self) -> OpTimingStats:
        with self._lock:
            return self._snapshot()

    def _snapshot(self) -> OpTimingStats:
        r, w = self._count[READ], self._count[WRITE]
        return OpTimingStats(r, self._mean[READ] if r else None, w, self._mean[WRITE] if w else None)


def post_json(url: str, payload: Any, timeout: float = 5.0) -> None:
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode("utf-8"), method="POST", headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req, timeout=timeout):
        pass


def _body(raw: bytes | None) -> Any:
    if not raw:
        raise ApiError(400, "validation", "request body required")
    try:
        return json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ApiError(400, "validation", f"body is not valid JSON: {exc}") from None


def _dump(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def _object(obj: Any, what: str) -> dict:
    if not isinstance(obj, dict):
        raise ApiError(400, "validation", f"{what} must be a JSON object")
    return obj


class Gateway:
    def __init__(
        self,
        ledger: Ledger,
        *,
        notify_urls: Iterable[str] = (),
        clock=None,
        notifier: Callable[[str, Any], None] = post_json,
        default_window_minutes: float = DEFAULT_WINDOW_MINUTES,
    ):
        self.ledger = ledger
        self.notify_urls = list(notify_urls)
        self.clock = clock or SystemClock()
        self.notifier = notifier
        self.default_window_minutes = default_window_minutes
        self.timings = TimingRecorder()
        self._notify_pool = ThreadPoolExecutor(max_workers=4, thread_name_prefix="notify") if self.notify_urls else None
        self._routes: list[tuple[str, re.Pattern, str | None, Callable]] = [
            ("POST", re.compile(r"/devices"), WRITE, self._create_device),
            ("GET", re.compile(r"/devices"), READ, self._list_devices),
            ("GET", re.compile(r"/devices/([^/]+)"), READ, self._read_device),
            ("PUT", re.compile(r"/devices/([^/]+)"), WRITE, self._update_device),
            ("DELETE", re.compile(r"/devices/([^/]+)"), WRITE, self._delete_device),
            ("GET", re.compile(r"/targets"), READ, self._targets),
            ("POST", re.compile(r"/resources"), WRITE, self._put_resource),
            ("POST", re.compile(r"/latency"), WRITE, self._put_latency),
            ("POST", re.compile(r"/select"), READ, self._select),
            ("GET", re.compile(r"/stats"), None, self._stats),
        ]

    # -- dispatch -----------------------------------------------------------------
    def handle(self, method: str, path: str, query: dict | None = None, body: bytes | None = None) -> tuple[int, Any]:
        query = query or {}
        path = path.rstrip("/") or "/"
        matched_path = False
        for route_method, pattern, kind, handler in self._routes:
            m = pattern.fullmatch(path)
            if not m:
                continue
            matched_path = True
            if route_method != method:
                continue
            started = self.clock.monotonic()
            try:
                status, payload = handler(*m.groups(), query=query, body=body)
            except Exception as exc:
                err = api_error_for(exc)
                if err.http_status >= 500:
                    log.error("%s %s failed: %s", method, path, exc, exc_info=err.code == "internal")
                status, payload = err.http_status, err.to_dict()
            if kind is not None:
                self.timings.record(kind, max(0.0, (self.clock.monotonic() - started) * 1000))
            return status, payload
        if matched_path:
            return 405, ApiError(405, "method-not-allowed", f"{method} not allowed on {path}").to_dict()
        return 404, ApiError(404, "no-route", f"no endpoint {path}").to_dict()

    def close(self) -> None:
        if self._notify_pool is not None:
            self._notify_pool.shutdown(wait=True)

    # -- handlers -----------------------------------------------------------------
    def _submit(self, contract: str, op: str, *args: str):
        return self.ledger.submit(contract, op, list(args))

    def _evaluate(self, contract: str, op: str, *args: str) -> Any:
        return json.loads(self.ledger.evaluate(contract, op, list(args)))

    def _create_device(self, *, query, body):
        tx = self._submit("inventory", "CreateDevice", _dump(_object(_body(body), "device")))
        return 201, {"id": tx.result, "txId": tx.tx_id}

    def _list_devices(self, *, query, body):
        role = query.get("role")
        gpu = str(query.get("gpu", "false")).lower() in ("1", "true", "yes")
        if role in ("server", "edge-server"):
            return 200, self._evaluate("inventory", "GetServerListGPU" if gpu else "GetServerList")
        if gpu:
            raise ApiError(400, "validation", "gpu filter requires role=server")
        if role == "sensor":
            return 200, self._evaluate("inventory", "GetSensorList")
        if role is not None:
            raise ApiError(400, "validation", f"unknown role filter {role!r}")
        return 200, self._evaluate("inventory", "ListDevices")

    def _read_device(self, device_id, *, query, body):
        return 200, self._evaluate("inventory", "ReadDevice", device_id)

    def _update_device(self, device_id, *, query, body):
        record = _object(_body(body), "device")
        if record.setdefault("id", device_id) != device_id:
            raise ApiError(400, "validation", "body id does not match the path")
        tx = self._submit("inventory", "UpdateDevice", _dump(record))
        return 200, {"id": tx.result, "txId": tx.tx_id}

    def _delete_device(self, device_id, *, query, body):
        tx = self._submit("inventory", "DeleteDevice", device_id)
        return 200, {"id": tx.result, "txId": tx.tx_id}

    def _targets(self, *, query, body):
        source = query.get("source")
        if not source:
            raise ApiError(400, "validation", "source query parameter required")
        return 200, self._evaluate("inventory", "GetProbeTargets", source)

    def _put_resource(self, *, query, body):
        tx = self._submit("resource", "PutResourceSample", _dump(_object(_body(body), "resource sample")))
        return 201, {"key": tx.result, "txId": tx.tx_id}

    def _put_latency(self, *, query, body):
        batch = _body(body)
        if not isinstance(batch, list):
            raise ApiError(400, "validation", "latency body must be a JSON array")
        tx = self._submit("latency", "PutLatencyMeasurements", _dump(batch))
        return 201, {"count": int(tx.result), "txId": tx.tx_id}

    def _select(self, *, query, body):
        req = _object(_body(body), "selection request")
        unknown = set(req) - {"targetId", "requiresGpu", "windowMinutes", "label"}
        if unknown:
            raise ApiError(400, "validation", f"unknown field(s) {sorted(unknown)}")
        target = req.get("targetId")
        if not isinstance(target, str):
            raise ApiError(400, "validation", "targetId must be a string")
        requires_gpu = req.get("requiresGpu", False)
        label = req.get("label", "")
        window = req.get("windowMinutes", self.default_window_minutes)
        if not isinstance(requires_gpu, bool) or not isinstance(label, str):
            raise ApiError(400, "validation", "requiresGpu must be a boolean and label a string")
        if isinstance(window, bool) or not isinstance(window, (int, float)):
            raise ApiError(400, "validation", "windowMinutes must be a number")
        now_ms = self.clock.now_ms()
        task = _dump({"requiresGpu": requires_gpu, "label": label})
        entries = self._evaluate("offload", "SelectOffloadServer", target, task, repr(window), str(now_ms))
        self._notify(entries[0])
        return 200, {
            "selectedServerId": entries[0]["serverId"],
            "targetId": target,
            "windowMinutes": window,
            "nowMs": now_ms,
            "entries": entries,
        }

    def _stats(self, *, query, body):
        return 200, self.timings.snapshot().to_dict()

    def _notify(self, head: dict) -> None:
        if self._notify_pool is None:
            return
        for url in self.notify_urls:
            self._notify_pool.submit(self._deliver, url, head)

    def _deliver(self, url: str, payload: dict) -> None:
        try:
            self.notifier(url, payload)
        except Exception as exc:
            log.warning("notification to %s failed: %s", url, exc)
