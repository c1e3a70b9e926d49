"""Latency measurement: authenticate, echo the start stamp, time the round trip."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

from edgeledger.clock import SystemClock
from edgeledger.contracts.records import FAILED_PROBE
from edgeledger.daemon.echo import EchoProtocolError, TcpConnector

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 5000
DEFAULT_FANOUT = 16


@dataclass(frozen=True)
class ProbeTarget:
    target_id: str
    address: str
    credential_ref: str

    def to_dict(self) -> dict:
        return {"targetId": self.target_id, "address": self.address, "credentialRef": self.credential_ref}

    @classmethod
    def from_dict(cls, obj: dict) -> "ProbeTarget":
        return cls(obj["targetId"], obj["address"], obj["credentialRef"])


@dataclass(frozen=True)
class ProbeResult:
    target_id: str
    latency_ms: int

    @property
    def failed(self) -> bool:
        return self.latency_ms == FAILED_PROBE


class Session(Protocol):
    def echo(self, payload: str) -> str: ...

    def __enter__(self): ...

    def __exit__(self, *exc): ...


class Connector(Protocol):
    def open(self, address: str, credential_ref: str, timeout: float) -> Session: ...


def probe(target: ProbeTarget, connector: Connector, clock, timeout_s: float) -> ProbeResult:
    stamp = str(clock.now_ms())
    started = clock.monotonic()
    try:
        with connector.open(target.address, target.credential_ref, timeout_s) as session:
            reply = session.echo(stamp)
    except (OSError, EchoProtocolError, ValueError) as exc:
        log.info("probe to %s (%s) failed: %s", target.target_id, target.address, exc)
        return ProbeResult(target.target_id, FAILED_PROBE)
    elapsed = clock.monotonic() - started
    if reply != stamp:
        log.warning("probe to %s returned a wrong payload", target.target_id)
        return ProbeResult(target.target_id, FAILED_PROBE)
    if elapsed > timeout_s:
        return ProbeResult(target.target_id, FAILED_PROBE)
    # the epsilon keeps float noise in clock subtraction from truncating 270 ms to 269
    return ProbeResult(target.target_id, int(elapsed * 1000 + 1e-6))


def measure_latency(
    targets: Sequence[ProbeTarget],
    connector: Connector | None = None,
    *,
    clock=None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    fanout: int = DEFAULT_FANOUT,
) -> list[ProbeResult]:
    """One probe per target, results in input order; failures come back as -1.

    Probes run concurrently up to ``fanout`` at a time. A fan-out of 1 probes
    sequentially in the calling thread, which is what virtual-time runs need.
    """
    connector = connector or TcpConnector()
    clock = clock or SystemClock()
    timeout_s = timeout_ms / 1000

    def one(target: ProbeTarget) -> ProbeResult:
        try:
            return probe(target, connector, clock, timeout_s)
        except Exception:  # a probe must never take the tick down with it
            log.exception("unexpected probe failure for %s", target.target_id)
            return ProbeResult(target.target_id, FAILED_PROBE)

    if fanout <= 1 or len(targets) <= 1:
        return [one(t) for t in targets]
    with ThreadPoolExecutor(max_workers=min(fanout, len(targets)), thread_name_prefix="probe") as pool:
        return list(pool.map(one, targets))
