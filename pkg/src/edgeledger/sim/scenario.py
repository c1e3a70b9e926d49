"""Scenario and expectation files (TOML).

A scenario lists the devices of one experiment together with the link and
resource behaviour the simulator should give each of them. See
``docs/scenario-format.md`` in the repository for the full schema.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from edgeledger.contracts.records import ROLE_SENSOR, ROLE_SERVER, DeviceRecord
from edgeledger.errors import ValidationError

WINDOW_TO_TICK_RATIO = 20
DESK_COLLECTION_SECONDS = 30
DESK_TICK_SECONDS = 1
TIME_MODES = ("virtual", "real")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class LinkProfile:
    base_one_way_ms: float
    jitter_ms: float = 0.0
    failure_probability: float = 0.0


@dataclass(frozen=True)
class ResourceProfile:
    cpu_mean: float
    mem_mean: float
    cpu_jitter: float = 0.0
    mem_jitter: float = 0.0
    container_count: int = 0


@dataclass(frozen=True)
class ScenarioDevice:
    record: DeviceRecord
    link: LinkProfile
    resources: ResourceProfile | None = None
    stop_after_seconds: float | None = None

    @property
    def id(self) -> str:
        return self.record.id


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    devices: tuple[ScenarioDevice, ...]
    collection_seconds: float = DESK_COLLECTION_SECONDS
    tick_seconds: float = DESK_TICK_SECONDS
    selection_window_minutes: float = DESK_TICK_SECONDS * WINDOW_TO_TICK_RATIO / 60
    rng_seed: int = 0
    target_id: str = ""
    requires_gpu: bool = False
    time_mode: str = "virtual"
    probe_timeout_ms: int = 10_000
    block_timeout_ms: int = 500
    block_max_txs: int = 10

    @property
    def servers(self) -> list[ScenarioDevice]:
        return [d for d in self.devices if d.record.role == ROLE_SERVER]

    @property
    def sensors(self) -> list[ScenarioDevice]:
        return [d for d in self.devices if d.record.role == ROLE_SENSOR]

    def device(self, device_id: str) -> ScenarioDevice:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def compressed(self, factor: float = 30) -> "ScenarioSpec":
        """Same experiment with every duration divided by ``factor``, run in real time."""
        devices = tuple(
            replace(d, stop_after_seconds=None if d.stop_after_seconds is None else d.stop_after_seconds / factor)
            for d in self.devices
        )
        return replace(
            self,
            devices=devices,
            collection_seconds=self.collection_seconds / factor,
            tick_seconds=self.tick_seconds / factor,
            selection_window_minutes=self.selection_window_minutes / factor,
            block_timeout_ms=max(1, round(self.block_timeout_ms / factor)),
            time_mode="real",
        ).validate()

    def validate(self) -> "ScenarioSpec":
        if not self.name:
            raise ScenarioError("name must not be empty")
        if self.tick_seconds <= 0:
            raise ScenarioError("tickSeconds must be positive")
        if self.collection_seconds < 3 * self.tick_seconds:
            raise ScenarioError(
                f"collectionSeconds ({self.collection_seconds}) must be at least 3 x tickSeconds ({self.tick_seconds})"
            )
        ratio = self.selection_window_minutes * 60 / self.tick_seconds
        if not math.isclose(ratio, WINDOW_TO_TICK_RATIO, rel_tol=1e-9):
            raise ScenarioError(
                f"selectionWindowMinutes x 60 / tickSeconds must be {WINDOW_TO_TICK_RATIO}, got {ratio:g}"
            )
        if self.time_mode not in TIME_MODES:
            raise ScenarioError(f"timeMode must be one of {list(TIME_MODES)}")
        if self.probe_timeout_ms <= 0 or self.block_timeout_ms < 0 or self.block_max_txs < 1:
            raise ScenarioError("probeTimeoutMs > 0, blockTimeoutMs >= 0 and blockMaxTxs >= 1 required")
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ScenarioError("device ids must be unique")
        if not self.servers:
            raise ScenarioError("at least one edge-server device is required")
        for d in self.devices:
            _check_link(d)
            if d.record.role == ROLE_SERVER and d.resources is None:
                raise ScenarioError(f"device {d.id}: edge servers need a resources profile")
            if d.resources is not None:
                _check_resources(d)
            if d.stop_after_seconds is not None and d.stop_after_seconds < 0:
                raise ScenarioError(f"device {d.id}: stopAfterSeconds must be non-negative")
        sensors = [d.id for d in self.sensors]
        if self.target_id not in sensors:
            raise ScenarioError(f"targetId {self.target_id!r} must name a sensor device ({sensors})")
        return self


def _check_link(d: ScenarioDevice) -> None:
    link = d.link
    if link.base_one_way_ms < 0:
        raise ScenarioError(f"device {d.id}: link.baseOneWayMs must be non-negative")
    if link.jitter_ms < 0:
        raise ScenarioError(f"device {d.id}: link.jitterMs must be non-negative")
    if not 0 <= link.failure_probability <= 1:
        raise ScenarioError(f"device {d.id}: link.failureProbability must be within [0, 1]")


def _check_resources(d: ScenarioDevice) -> None:
    r = d.resources
    if not (0 <= r.cpu_mean <= 100 and 0 <= r.mem_mean <= 100):
        raise ScenarioError(f"device {d.id}: resource means must be within [0, 100]")
    if r.cpu_jitter < 0 or r.mem_jitter < 0 or r.container_count < 0:
        raise ScenarioError(f"device {d.id}: resource jitter and containerCount must be non-negative")


_TOP = {
    "name", "devices", "collectionSeconds", "tickSeconds", "selectionWindowMinutes", "rngSeed", "targetId",
    "requiresGpu", "timeMode", "probeTimeoutMs", "blockTimeoutMs", "blockMaxTxs",
}
_DEVICE_EXTRA = {"link", "resources", "stopAfterSeconds"}
_LINK = {"baseOneWayMs": "base_one_way_ms", "jitterMs": "jitter_ms", "failureProbability": "failure_probability"}
_RESOURCES = {
    "cpuMean": "cpu_mean",
    "cpuJitter": "cpu_jitter",
    "memMean": "mem_mean",
    "memJitter": "mem_jitter",
    "containerCount": "container_count",
}


def _reject_unknown(table: dict, allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {unknown}")


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where} must be a number")
    return value


def _profile(table: Any, mapping: dict[str, str], cls, where: str, required: tuple[str, ...]):
    if not isinstance(table, dict):
        raise ScenarioError(f"{where} must be a table")
    _reject_unknown(table, mapping, where)
    missing = [k for k in required if k not in table]
    if missing:
        raise ScenarioError(f"{where}: missing field(s) {missing}")
    kwargs = {mapping[k]: _number(v, f"{where}.{k}") for k, v in table.items()}
    if "container_count" in kwargs and not isinstance(kwargs["container_count"], int):
        raise ScenarioError(f"{where}.containerCount must be an integer")
    return cls(**kwargs)


def parse_scenario(data: dict) -> ScenarioSpec:
    _reject_unknown(data, _TOP, "scenario")
    raw_devices = data.get("devices")
    if not isinstance(raw_devices, list) or not raw_devices:
        raise ScenarioError("scenario: [[devices]] must list at least one device")
    devices = []
    for i, raw in enumerate(raw_devices):
        where = f"devices[{i}]"
        if not isinstance(raw, dict):
            raise ScenarioError(f"{where} must be a table")
        record_fields = {k: v for k, v in raw.items() if k not in _DEVICE_EXTRA}
        try:
            record = DeviceRecord.from_dict(record_fields)
        except ValidationError as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        where = f"device {record.id}"
        link = _profile(raw.get("link", {"baseOneWayMs": 0}), _LINK, LinkProfile, f"{where} link", ("baseOneWayMs",))
        resources = None
        if "resources" in raw:
            resources = _profile(raw["resources"], _RESOURCES, ResourceProfile, f"{where} resources", ("cpuMean", "memMean"))
        stop_after = raw.get("stopAfterSeconds")
        if stop_after is not None:
            stop_after = _number(stop_after, f"{where}.stopAfterSeconds")
        devices.append(ScenarioDevice(record, link, resources, stop_after))

    kwargs: dict[str, Any] = {"name": data.get("name", ""), "devices": tuple(devices)}
    for key, attr in (
        ("collectionSeconds", "collection_seconds"),
        ("tickSeconds", "tick_seconds"),
        ("selectionWindowMinutes", "selection_window_minutes"),
    ):
        if key in data:
            kwargs[attr] = _number(data[key], key)
    for key, attr in (
        ("rngSeed", "rng_seed"),
        ("probeTimeoutMs", "probe_timeout_ms"),
        ("blockTimeoutMs", "block_timeout_ms"),
        ("blockMaxTxs", "block_max_txs"),
    ):
        if key in data:
            if isinstance(data[key], bool) or not isinstance(data[key], int):
                raise ScenarioError(f"{key} must be an integer")
            kwargs[attr] = data[key]
    if "selectionWindowMinutes" not in data:
        kwargs["selection_window_minutes"] = kwargs.get("tick_seconds", DESK_TICK_SECONDS) * WINDOW_TO_TICK_RATIO / 60
    if "requiresGpu" in data:
        if not isinstance(data["requiresGpu"], bool):
            raise ScenarioError("requiresGpu must be a boolean")
        kwargs["requires_gpu"] = data["requiresGpu"]
    if "timeMode" in data:
        kwargs["time_mode"] = data["timeMode"]
    sensors = [d.id for d in devices if d.record.role == ROLE_SENSOR]
    target = data.get("targetId")
    if target is None:
        if len(sensors) != 1:
            raise ScenarioError("targetId is required unless the scenario has exactly one sensor")
        target = sensors[0]
    kwargs["target_id"] = target
    if not isinstance(kwargs["name"], str):
        raise ScenarioError("name must be a string")
    return ScenarioSpec(**kwargs).validate()


def _read_toml(path: str | os.PathLike) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def load_scenario(path: str | os.PathLike) -> ScenarioSpec:
    data = _read_toml(path)
    try:
        return parse_scenario(data)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class Expectation:
    selected_server_id: str
    mean_latency_ms: dict[str, tuple[float, float]] = field(default_factory=dict)
    mean_cpu: dict[str, tuple[float, float]] = field(default_factory=dict)
    mean_mem: dict[str, tuple[float, float]] = field(default_factory=dict)


def parse_expectation(data: dict) -> Expectation:
    _reject_unknown(data, {"selectedServerId", "meanLatencyMs", "meanCpu", "meanMem"}, "expectation")
    selected = data.get("selectedServerId")
    if not isinstance(selected, str):
        raise ScenarioError("expectation: selectedServerId must be a string")
    ranges = {}
    for key in ("meanLatencyMs", "meanCpu", "meanMem"):
        table = data.get(key, {})
        if not isinstance(table, dict):
            raise ScenarioError(f"expectation: {key} must be a table")
        parsed = {}
        for server, bounds in table.items():
            if (
                not isinstance(bounds, list)
                or len(bounds) != 2
                or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in bounds)
                or bounds[0] > bounds[1]
            ):
                raise ScenarioError(f"expectation: {key}.{server} must be [low, high]")
            parsed[server] = (float(bounds[0]), float(bounds[1]))
        ranges[key] = parsed
    return Expectation(selected, ranges["meanLatencyMs"], ranges["meanCpu"], ranges["meanMem"])


def load_expectation(path: str | os.PathLike) -> Expectation:
    try:
        return parse_expectation(_read_toml(path))
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


FIXTURE_DIR = Path(__file__).with_name("fixtures")


def bundled_scenario(name: str) -> Path:
    """Path of a bundled fixture such as ``exp1`` (file ``exp1.toml``)."""
    path = FIXTURE_DIR / f"{name}.toml"
    if not path.exists():
        raise ScenarioError(f"no bundled scenario {name!r}")
    return path
