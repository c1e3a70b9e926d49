"""The per-device daemon loop."""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field

from edgeledger.clock import SystemClock
from edgeledger.contracts.records import check_id
from edgeledger.daemon.client import GatewayClientError, HttpGatewayClient
from edgeledger.daemon.echo import EchoServer
from edgeledger.daemon.probe import DEFAULT_FANOUT, DEFAULT_TIMEOUT_MS, Connector, measure_latency
from edgeledger.daemon.sampler import HostMeter, Meter, sample_resources
from edgeledger.errors import ValidationError

log = logging.getLogger(__name__)


@dataclass
class DaemonConfig:
    device_id: str
    gateway_url: str = "http://127.0.0.1:8080"
    interval_seconds: float = 30
    probe_timeout_ms: int = DEFAULT_TIMEOUT_MS
    listen_address: str | None = None
    credential_ref: str | None = None
    probe_fanout: int = DEFAULT_FANOUT

    def validate(self) -> "DaemonConfig":
        try:
            check_id(self.device_id, "device id")
        except ValidationError as exc:
            raise ValueError(str(exc)) from None
        if not self.interval_seconds or self.interval_seconds <= 0:
            raise ValueError("interval must be positive")
        if self.probe_timeout_ms <= 0:
            raise ValueError("probe timeout must be positive")
        if self.probe_fanout < 1:
            raise ValueError("probe fan-out must be at least 1")
        return self


@dataclass
class TickOutcome:
    started: float
    targets: int = 0
    latency_posted: bool = False
    resource_posted: bool = False
    errors: list[str] = field(default_factory=list)


class Daemon:
    """Fetch targets, probe them, post the batch, then sample and post resources.

    Each step is best effort: a gateway outage is logged and the next tick
    tries again. Ticks run on a fixed-rate grid; a tick that overruns its slot
    skips the missed slots and the next tick starts on the following grid point.
    """

    def __init__(self, config: DaemonConfig, client, *, connector: Connector | None = None,
                 meter: Meter | None = None, clock=None):
        self.config = config.validate()
        self.client = client
        self.connector = connector
        self.meter = meter
        self.clock = clock or SystemClock()
        self.ticks: list[TickOutcome] = []

    def tick(self) -> TickOutcome:
        cfg = self.config
        outcome = TickOutcome(started=self.clock.monotonic())
        try:
            targets = self.client.get_targets(cfg.device_id)
        except GatewayClientError as exc:
            outcome.errors.append(f"targets: {exc}")
            log.warning("%s: could not fetch targets: %s", cfg.device_id, exc)
            targets = None
        if targets:
            outcome.targets = len(targets)
            results = measure_latency(
                targets, self.connector, clock=self.clock, timeout_ms=cfg.probe_timeout_ms, fanout=cfg.probe_fanout
            )
            try:
                self.client.post_latency(cfg.device_id, results)
                outcome.latency_posted = True
            except GatewayClientError as exc:
                outcome.errors.append(f"latency: {exc}")
                log.warning("%s: could not post latency: %s", cfg.device_id, exc)
        sample = sample_resources(cfg.device_id, self.meter)
        if sample is not None:
            try:
                self.client.post_resource(sample)
                outcome.resource_posted = True
            except GatewayClientError as exc:
                outcome.errors.append(f"resources: {exc}")
                log.warning("%s: could not post resources: %s", cfg.device_id, exc)
        self.ticks.append(outcome)
        return outcome

    def run(self, stop: threading.Event, *, max_ticks: int | None = None) -> None:
        interval = self.config.interval_seconds
        origin = self.clock.monotonic()
        slot = 0
        while not stop.is_set():
            self.tick()
            if max_ticks is not None and len(self.ticks) >= max_ticks:
                return
            elapsed = self.clock.monotonic() - origin
            slot = max(slot + 1, math.ceil(elapsed / interval))
            delay = origin + slot * interval - self.clock.monotonic()
            if delay > 0 and self.clock.wait_event(stop, delay):
                return


def run_loop(config: DaemonConfig, stop: threading.Event | None = None) -> None:
    """Production entry point: HTTP gateway, TCP probes, psutil sampling."""
    config.validate()
    stop = stop or threading.Event()
    client = HttpGatewayClient(config.gateway_url)
    echo = None
    if config.listen_address:
        credential = config.credential_ref
        while credential is None and not stop.is_set():
            try:
                credential = client.get_device(config.device_id).credential_ref
            except GatewayClientError as exc:
                log.warning("waiting for own inventory record: %s", exc)
                stop.wait(config.interval_seconds)
        if credential is None:
            return
        echo = EchoServer(config.listen_address, credential)
        threading.Thread(target=echo.serve_forever, name="echo", daemon=True).start()
        log.info("echo peer listening on %s", echo.address)
    try:
        Daemon(config, client, meter=HostMeter()).run(stop)
    finally:
        if echo is not None:
            echo.shutdown()
            echo.server_close()
