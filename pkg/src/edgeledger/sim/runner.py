"""Run a scenario end to end and summarise it.

A run purges the ledger, registers the devices through the gateway, lets one
daemon per edge server collect for ``collectionSeconds``, asks the gateway
for a selection and then reads the per-server window means back from the
ledger at the selection's ``nowMs``.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field

from edgeledger.clock import SystemClock, VirtualClock
from edgeledger.contracts import default_contracts
from edgeledger.contracts.records import LatencyRecord, window_bounds
from edgeledger.daemon import Daemon, DaemonConfig, GatewayClientError, HttpGatewayClient, LocalGatewayClient
from edgeledger.daemon.echo import TcpConnector
from edgeledger.gateway import Gateway, GatewayServer
from edgeledger.ledger import Ledger
from edgeledger.sim.network import LoopbackNetwork, ProfileMeter, VirtualNetwork, stream
from edgeledger.sim.scenario import Expectation, ScenarioSpec

log = logging.getLogger(__name__)


class PurgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class ServerSummary:
    server_id: str
    mean_latency_ms: float | None
    latency_samples: int
    failed_probes: int
    mean_cpu: float | None
    mean_mem: float | None
    resource_samples: int
    rank: int | None

    def to_dict(self) -> dict:
        return {
            "serverId": self.server_id,
            "meanLatencyMs": self.mean_latency_ms,
            "latencySamples": self.latency_samples,
            "failedProbes": self.failed_probes,
            "meanCpu": self.mean_cpu,
            "meanMem": self.mean_mem,
            "resourceSamples": self.resource_samples,
            "rank": self.rank,
        }


@dataclass(frozen=True)
class ScenarioReport:
    scenario: str
    time_mode: str
    rng_seed: int
    target_id: str
    window_minutes: float
    now_ms: int
    selected_server_id: str | None
    selection_error: str | None
    entries: tuple[dict, ...]
    servers: tuple[ServerSummary, ...]
    read_count: int
    read_mean_ms: float | None
    write_count: int
    write_mean_ms: float | None
    block_height: int
    chain_valid: bool

    def server(self, server_id: str) -> ServerSummary:
        for s in self.servers:
            if s.server_id == server_id:
                return s
        raise KeyError(server_id)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "timeMode": self.time_mode,
            "rngSeed": self.rng_seed,
            "targetId": self.target_id,
            "windowMinutes": self.window_minutes,
            "nowMs": self.now_ms,
            "selectedServerId": self.selected_server_id,
            "selectionError": self.selection_error,
            "entries": list(self.entries),
            "servers": [s.to_dict() for s in self.servers],
            "readCount": self.read_count,
            "readMeanMs": self.read_mean_ms,
            "writeCount": self.write_count,
            "writeMeanMs": self.write_mean_ms,
            "blockHeight": self.block_height,
            "chainValid": self.chain_valid,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class Comparison:
    passed: bool
    diffs: tuple[str, ...] = field(default_factory=tuple)


def compare_to_expectation(report: ScenarioReport, expectation: Expectation) -> Comparison:
    """Pass iff the winner matches and every declared mean lies in its range."""
    diffs = []
    if report.selected_server_id != expectation.selected_server_id:
        diffs.append(
            f"selectedServerId: expected {expectation.selected_server_id!r}, got {report.selected_server_id!r}"
        )
    known = {s.server_id: s for s in report.servers}
    for label, ranges, attr in (
        ("meanLatencyMs", expectation.mean_latency_ms, "mean_latency_ms"),
        ("meanCpu", expectation.mean_cpu, "mean_cpu"),
        ("meanMem", expectation.mean_mem, "mean_mem"),
    ):
        for server_id, (low, high) in sorted(ranges.items()):
            summary = known.get(server_id)
            value = None if summary is None else getattr(summary, attr)
            if value is None:
                diffs.append(f"{label}.{server_id}: expected within [{low:g}, {high:g}], no value reported")
            elif not low <= value <= high:
                diffs.append(f"{label}.{server_id}: {value:.2f} outside [{low:g}, {high:g}]")
    return Comparison(not diffs, tuple(diffs))


class ScenarioRunner:
    """One run of one scenario. ``ledger`` and ``gateway`` stay inspectable after ``run``."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec.validate()
        self.virtual = spec.time_mode == "virtual"
        self.clock = VirtualClock() if self.virtual else SystemClock()
        self.ledger: Ledger | None = None
        self.gateway: Gateway | None = None
        self.daemons: dict[str, Daemon] = {}

    def run(self) -> ScenarioReport:
        if self.virtual:
            with self.clock.attach("scenario"):
                return self._run(LocalGatewayClient, None)
        network = LoopbackNetwork(self.spec)
        try:
            return self._run(HttpGatewayClient, network)
        finally:
            network.close()

    def _run(self, client_cls, loopback: LoopbackNetwork | None) -> ScenarioReport:
        spec, clock = self.spec, self.clock
        self.ledger = Ledger(
            default_contracts(),
            max_txs=spec.block_max_txs,
            block_timeout_ms=spec.block_timeout_ms,
            clock=clock,
            fsync=False,
        )
        leftovers = self.ledger.range_query("")
        if leftovers:
            raise PurgeError(f"fresh ledger still holds {len(leftovers)} keys")
        self.gateway = Gateway(self.ledger, clock=clock, default_window_minutes=spec.selection_window_minutes)
        server = None
        try:
            if client_cls is LocalGatewayClient:
                client = LocalGatewayClient(self.gateway)
            else:
                server = GatewayServer(self.gateway, "127.0.0.1:0")
                server.start()
                client = HttpGatewayClient(server.url)
            for device in spec.devices:
                client.create_device(device.record)
            self._collect(client, loopback)
            selection = self._select(client)
            return self._report(selection)
        finally:
            if server is not None:
                server.stop()
            self.gateway.close()

    def _collect(self, client, loopback: LoopbackNetwork | None) -> None:
        spec, clock = self.spec, self.clock
        virtual_net = VirtualNetwork(spec, clock) if loopback is None else None
        stops: list[threading.Event] = []
        workers = []
        for device in spec.servers:
            if virtual_net is not None:
                connector, fanout = virtual_net.connector(device.id), 1
            else:
                connector, fanout = TcpConnector(loopback.address_maps[device.id]), 16
            config = DaemonConfig(
                device_id=device.id,
                interval_seconds=spec.tick_seconds,
                probe_timeout_ms=spec.probe_timeout_ms,
                probe_fanout=fanout,
            )
            meter = ProfileMeter(device.resources, stream(spec.rng_seed, "res", device.id))
            daemon = Daemon(config, client, connector=connector, meter=meter, clock=clock)
            self.daemons[device.id] = daemon
            stop = threading.Event()
            stops.append(stop)
            if device.stop_after_seconds is not None:
                if device.stop_after_seconds == 0:
                    stop.set()
                else:
                    workers.append(clock.spawn(_stopper(clock, stop, device.stop_after_seconds), f"stop-{device.id}"))
            workers.append(clock.spawn(lambda d=daemon, s=stop: d.run(s), f"daemon-{device.id}"))
        clock.sleep(spec.collection_seconds)
        for stop in stops:
            stop.set()
        clock.join(workers)

    def _select(self, client) -> dict:
        try:
            return client.select(
                self.spec.target_id,
                requires_gpu=self.spec.requires_gpu,
                window_minutes=self.spec.selection_window_minutes,
            )
        except GatewayClientError as exc:
            log.warning("selection failed: %s", exc)
            return {"error": exc.message or exc.code, "nowMs": self.clock.now_ms()}

    def _report(self, selection: dict) -> ScenarioReport:
        spec, ledger = self.spec, self.ledger
        window, now_ms = spec.selection_window_minutes, selection["nowMs"]
        entries = tuple(selection.get("entries", ()))
        ranks = {e["serverId"]: i for i, e in enumerate(entries)}
        args = [repr(window), str(now_ms)]
        latency = json.loads(ledger.evaluate("latency", "AnalyseLatencyToTarget", [spec.target_id, *args]))
        per_server = {s["sourceId"]: s for s in latency["perServer"]}
        history = [
            LatencyRecord.from_dict(r, stamped=True)
            for r in json.loads(ledger.evaluate("latency", "GetLatencyHistory", [spec.target_id]))
        ]
        lo, hi = window_bounds(window, now_ms)
        servers = []
        for device in spec.servers:
            lat = per_server.get(device.id)
            res = json.loads(ledger.evaluate("resource", "AnalyseResources", [device.id, *args]))
            failed = sum(1 for r in history if r.source_id == device.id and r.failed and lo <= r.timestamp_ms <= hi)
            servers.append(
                ServerSummary(
                    server_id=device.id,
                    mean_latency_ms=None if lat is None else lat["avgLatencyMs"],
                    latency_samples=0 if lat is None else lat["sampleCount"],
                    failed_probes=failed,
                    mean_cpu=res.get("avgCpu"),
                    mean_mem=res.get("avgMemory"),
                    resource_samples=res["sampleCount"],
                    rank=ranks.get(device.id),
                )
            )
        stats = self.gateway.timings.snapshot()
        return ScenarioReport(
            scenario=spec.name,
            time_mode=spec.time_mode,
            rng_seed=spec.rng_seed,
            target_id=spec.target_id,
            window_minutes=window,
            now_ms=now_ms,
            selected_server_id=selection.get("selectedServerId"),
            selection_error=selection.get("error"),
            entries=entries,
            servers=tuple(servers),
            read_count=stats.read_count,
            read_mean_ms=stats.read_mean_ms,
            write_count=stats.write_count,
            write_mean_ms=stats.write_mean_ms,
            block_height=ledger.height,
            chain_valid=ledger.verify_chain().valid,
        )


def _stopper(clock, stop: threading.Event, after_seconds: float):
    def body() -> None:
        clock.sleep(after_seconds)
        stop.set()

    return body


def run_scenario(spec: ScenarioSpec) -> ScenarioReport:
    started = time.perf_counter()
    report = ScenarioRunner(spec).run()
    log.info("scenario %s (%s time) finished in %.2fs", spec.name, spec.time_mode, time.perf_counter() - started)
    return report


__all__ = [
    "Comparison",
    "PurgeError",
    "ScenarioReport",
    "ScenarioRunner",
    "ServerSummary",
    "compare_to_expectation",
    "run_scenario",
]
