"""Gateway clients used by daemons, the simulator and tests."""
from __future__ import annotations

import json
import urllib.error
import urllib.parse
import urllib.request
from typing import Any, Iterable

from edgeledger.contracts.records import DeviceRecord, ResourceSample
from edgeledger.daemon.probe import ProbeResult, ProbeTarget


class GatewayClientError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code
        self.message = message


class GatewayUnavailableError(GatewayClientError):
    pass


class _ClientBase:
    def _request(self, method: str, path: str, query: dict | None, body: Any) -> tuple[int, Any]:
        raise NotImplementedError

    def _call(self, method: str, path: str, query: dict | None = None, body: Any = None) -> Any:
        status, payload = self._request(method, path, query, body)
        if status >= 400:
            payload = payload if isinstance(payload, dict) else {}
            cls = GatewayUnavailableError if status == 503 else GatewayClientError
            raise cls(status, payload.get("code", "error"), payload.get("message", ""))
        return payload

    def create_device(self, record: DeviceRecord) -> str:
        return self._call("POST", "/devices", body=record.to_dict())["id"]

    def get_device(self, device_id: str) -> DeviceRecord:
        return DeviceRecord.from_dict(self._call("GET", f"/devices/{urllib.parse.quote(device_id)}"))

    def get_targets(self, source_id: str) -> list[ProbeTarget]:
        return [ProbeTarget.from_dict(t) for t in self._call("GET", "/targets", {"source": source_id})]

    def post_latency(self, source_id: str, results: Iterable[ProbeResult]) -> int:
        batch = [{"sourceId": source_id, "targetId": r.target_id, "latencyMs": r.latency_ms} for r in results]
        return self._call("POST", "/latency", body=batch)["count"]

    def post_resource(self, sample: ResourceSample) -> str:
        return self._call("POST", "/resources", body=sample.to_dict())["key"]

    def select(self, target_id: str, *, requires_gpu: bool = False, window_minutes: float | None = None) -> dict:
        body: dict[str, Any] = {"targetId": target_id, "requiresGpu": requires_gpu}
        if window_minutes is not None:
            body["windowMinutes"] = window_minutes
        return self._call("POST", "/select", body=body)

    def stats(self) -> dict:
        return self._call("GET", "/stats")


class HttpGatewayClient(_ClientBase):
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method, path, query, body):
        url = self.base_url + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        data = None if body is None else json.dumps(body).encode("utf-8")
        req = urllib.request.Request(url, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read() or b"null")
        except urllib.error.HTTPError as err:
            try:
                payload = json.loads(err.read() or b"null")
            except ValueError:
                payload = None
            return err.code, payload
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise GatewayUnavailableError(503, "unreachable", str(exc)) from exc


class LocalGatewayClient(_ClientBase):
    """Talks to an in-process gateway through the same JSON bodies as HTTP."""

    def __init__(self, gateway):
        self.gateway = gateway

    def _request(self, method, path, query, body):
        raw = None if body is None else json.dumps(body).encode("utf-8")
        status, payload = self.gateway.handle(method, path, query or {}, raw)
        return status, json.loads(json.dumps(payload))
