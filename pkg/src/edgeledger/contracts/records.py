"""Ledger assets, their wire form and field validation.

Wire names are camelCase and fixed; values are stored as canonical JSON in
the field order defined by each ``to_dict``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any

from edgeledger.errors import ValidationError
from edgeledger.ledger.chain import canonical_json

ROLE_SERVER = "edge-server"
ROLE_SENSOR = "sensor"
ROLES = (ROLE_SERVER, ROLE_SENSOR)
FAILED_PROBE = -1

_ID_RE = re.compile(r"^[A-Za-z0-9._-]{1,128}$")


def device_key(device_id: str) -> str:
    return f"device:{device_id}"


def resource_key(device_id: str, timestamp_ms: int, tx_id: str) -> str:
    return f"resource:{device_id}:{timestamp_ms:020d}:{tx_id}"


def latency_key(target_id: str, source_id: str, timestamp_ms: int, tx_id: str) -> str:
    return f"latency:{target_id}:{source_id}:{timestamp_ms:020d}:{tx_id}"


def encode(obj: dict) -> bytes:
    return canonical_json(obj)


def decode_json(text: str | bytes, what: str) -> Any:
    try:
        return json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{what}: invalid JSON ({exc})") from None


def check_id(value: Any, field: str = "id") -> str:
    if not isinstance(value, str) or not _ID_RE.match(value):
        raise ValidationError(f"{field} must be 1-128 characters of [A-Za-z0-9._-], got {value!r}")
    return value


def parse_address(address: str) -> tuple[str, int]:
    """Split ``host:port``; IPv6 hosts go in brackets."""
    if not isinstance(address, str) or ":" not in address:
        raise ValueError(f"address must be host:port, got {address!r}")
    host, _, port_text = address.rpartition(":")
    if host.startswith("[") and host.endswith("]"):
        host = host[1:-1]
    elif ":" in host:
        raise ValueError(f"IPv6 hosts must be bracketed, got {address!r}")
    if not host or not port_text.isdigit():
        raise ValueError(f"address must be host:port, got {address!r}")
    port = int(port_text)
    if not 0 < port < 65536:
        raise ValueError(f"port out of range in {address!r}")
    return host, port


def _fields(obj: Any, what: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    if not isinstance(obj, dict):
        raise ValidationError(f"{what} must be an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ValidationError(f"{what}: unknown field(s) {sorted(unknown)}")
    missing = [f for f in required if f not in obj]
    if missing:
        raise ValidationError(f"{what}: missing field(s) {missing}")
    return obj


def _str(obj: dict, field: str) -> str:
    value = obj[field]
    if not isinstance(value, str):
        raise ValidationError(f"{field} must be a string")
    return value


def _bool(obj: dict, field: str) -> bool:
    value = obj[field]
    if not isinstance(value, bool):
        raise ValidationError(f"{field} must be a boolean")
    return value


def _int(obj: dict, field: str) -> int:
    value = obj[field]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{field} must be an integer")
    return value


def _percent(obj: dict, field: str) -> float:
    value = obj[field]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValidationError(f"{field} must be a number")
    if not 0 <= value <= 100:
        raise ValidationError(f"{field} must be within [0, 100], got {value}")
    return float(value)


@dataclass(frozen=True)
class DeviceRecord:
    id: str
    name: str
    role: str
    has_gpu: bool
    address: str
    credential_ref: str
    active: bool = True

    @property
    def is_server(self) -> bool:
        return self.role == ROLE_SERVER

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "role": self.role,
            "hasGpu": self.has_gpu,
            "address": self.address,
            "credentialRef": self.credential_ref,
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, obj: Any) -> "DeviceRecord":
        obj = _fields(
            obj, "device", ("id", "name", "role", "hasGpu", "address", "credentialRef"), ("active",)
        )
        role = _str(obj, "role")
        if role not in ROLES:
            raise ValidationError(f"role must be one of {list(ROLES)}, got {role!r}")
        address = _str(obj, "address")
        try:
            parse_address(address)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        return cls(
            id=check_id(obj["id"]),
            name=_str(obj, "name"),
            role=role,
            has_gpu=_bool(obj, "hasGpu"),
            address=address,
            credential_ref=_str(obj, "credentialRef"),
            active=_bool(obj, "active") if "active" in obj else True,
        )


@dataclass(frozen=True)
class ResourceSample:
    device_id: str
    cpu_percent: float
    memory_percent: float
    container_count: int
    timestamp_ms: int | None = None  # assigned by the ordering step

    def to_dict(self) -> dict:
        out = {
            "deviceId": self.device_id,
            "timestampMs": self.timestamp_ms,
            "cpuPercent": self.cpu_percent,
            "memoryPercent": self.memory_percent,
            "containerCount": self.container_count,
        }
        if self.timestamp_ms is None:
            del out["timestampMs"]
        return out

    @classmethod
    def from_dict(cls, obj: Any, *, stamped: bool = False) -> "ResourceSample":
        base = ("deviceId", "cpuPercent", "memoryPercent", "containerCount")
        obj = _fields(obj, "resource sample", base + (("timestampMs",) if stamped else ()))
        count = _int(obj, "containerCount")
        if count < 0:
            raise ValidationError("containerCount must be non-negative")
        return cls(
            device_id=check_id(obj["deviceId"], "deviceId"),
            cpu_percent=_percent(obj, "cpuPercent"),
            memory_percent=_percent(obj, "memoryPercent"),
            container_count=count,
            timestamp_ms=_int(obj, "timestampMs") if stamped else None,
        )


@dataclass(frozen=True)
class LatencyRecord:
    source_id: str
    target_id: str
    latency_ms: int
    timestamp_ms: int | None = None

    @property
    def failed(self) -> bool:
        return self.latency_ms == FAILED_PROBE

    def to_dict(self) -> dict:
        out = {
            "sourceId": self.source_id,
            "targetId": self.target_id,
            "timestampMs": self.timestamp_ms,
            "latencyMs": self.latency_ms,
        }
        if self.timestamp_ms is None:
            del out["timestampMs"]
        return out

    @classmethod
    def from_dict(cls, obj: Any, *, stamped: bool = False) -> "LatencyRecord":
        base = ("sourceId", "targetId", "latencyMs")
        obj = _fields(obj, "latency record", base + (("timestampMs",) if stamped else ()))
        latency = _int(obj, "latencyMs")
        if latency < 0 and latency != FAILED_PROBE:
            raise ValidationError(f"latencyMs must be >= 0 or exactly -1, got {latency}")
        return cls(
            source_id=check_id(obj["sourceId"], "sourceId"),
            target_id=check_id(obj["targetId"], "targetId"),
            latency_ms=latency,
            timestamp_ms=_int(obj, "timestampMs") if stamped else None,
        )


@dataclass(frozen=True)
class ResourceAnalysis:
    device_id: str
    window_minutes: float
    sample_count: int
    avg_cpu: float | None = None
    avg_memory: float | None = None
    avg_containers: float | None = None

    def to_dict(self) -> dict:
        out = {
            "deviceId": self.device_id,
            "windowMinutes": self.window_minutes,
            "sampleCount": self.sample_count,
            "avgCpu": self.avg_cpu,
            "avgMemory": self.avg_memory,
            "avgContainers": self.avg_containers,
        }
        if self.sample_count == 0:
            for key in ("avgCpu", "avgMemory", "avgContainers"):
                del out[key]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ResourceAnalysis":
        return cls(
            device_id=obj["deviceId"],
            window_minutes=obj["windowMinutes"],
            sample_count=obj["sampleCount"],
            avg_cpu=obj.get("avgCpu"),
            avg_memory=obj.get("avgMemory"),
            avg_containers=obj.get("avgContainers"),
        )


@dataclass(frozen=True)
class ServerLatency:
    source_id: str
    avg_latency_ms: float
    sample_count: int

    def to_dict(self) -> dict:
        return {"sourceId": self.source_id, "avgLatencyMs": self.avg_latency_ms, "sampleCount": self.sample_count}


@dataclass(frozen=True)
class LatencyAnalysis:
    target_id: str
    window_minutes: float
    per_server: tuple[ServerLatency, ...]

    def for_server(self, server_id: str) -> ServerLatency | None:
        for entry in self.per_server:
            if entry.source_id == server_id:
                return entry
        return None

    def to_dict(self) -> dict:
        return {
            "targetId": self.target_id,
            "windowMinutes": self.window_minutes,
            "perServer": [s.to_dict() for s in self.per_server],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LatencyAnalysis":
        return cls(
            target_id=obj["targetId"],
            window_minutes=obj["windowMinutes"],
            per_server=tuple(
                ServerLatency(s["sourceId"], s["avgLatencyMs"], s["sampleCount"]) for s in obj["perServer"]
            ),
        )


@dataclass(frozen=True)
class TaskProperties:
    requires_gpu: bool = False
    label: str = ""

    def to_dict(self) -> dict:
        return {"requiresGpu": self.requires_gpu, "label": self.label}

    @classmethod
    def from_dict(cls, obj: Any) -> "TaskProperties":
        obj = _fields(obj, "task", ("requiresGpu",), ("label",))
        return cls(_bool(obj, "requiresGpu"), _str(obj, "label") if "label" in obj else "")


@dataclass(frozen=True)
class SelectionEntry:
    server_id: str
    avg_latency_ms: float
    avg_cpu: float
    avg_memory: float
    avg_containers: float

    def sort_key(self) -> tuple:
        return (self.avg_latency_ms, self.avg_cpu, self.avg_memory, self.avg_containers, self.server_id)

    def to_dict(self) -> dict:
        return {
            "serverId": self.server_id,
            "avgLatencyMs": self.avg_latency_ms,
            "avgCpu": self.avg_cpu,
            "avgMemory": self.avg_memory,
            "avgContainers": self.avg_containers,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SelectionEntry":
        return cls(obj["serverId"], obj["avgLatencyMs"], obj["avgCpu"], obj["avgMemory"], obj["avgContainers"])


def parse_window(text: str) -> float:
    """Window length in minutes; integral values come back as int."""
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ValidationError(f"windowMinutes must be a number, got {text!r}") from None
    if not math.isfinite(value) or value <= 0:
        raise ValidationError(f"windowMinutes must be positive, got {text!r}")
    return int(value) if value.is_integer() else value


def parse_now(text: str) -> int:
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise ValidationError(f"nowMs must be an integer, got {text!r}") from None
    if value < 0:
        raise ValidationError("nowMs must be non-negative")
    return value


def window_bounds(window_minutes: float, now_ms: int) -> tuple[int, int]:
    """Closed interval [now - window, now] in milliseconds."""
    return now_ms - round(window_minutes * 60_000), now_ms
