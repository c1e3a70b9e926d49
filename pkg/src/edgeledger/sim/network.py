"""Synthetic links and resource meters for simulated devices."""
from __future__ import annotations

import random
import threading

from edgeledger.daemon.echo import AuthRejectedError, EchoServer
from edgeledger.sim.scenario import LinkProfile, ResourceProfile, ScenarioDevice, ScenarioSpec


def stream(seed: int, purpose: str, device_id: str) -> random.Random:
    """Independent, reproducible random stream per (seed, purpose, device)."""
    return random.Random(f"{seed}:{purpose}:{device_id}")


class LinkModel:
    """One device's access link: each traversal costs base +/- uniform jitter."""

    def __init__(self, profile: LinkProfile, rng: random.Random):
        self.profile = profile
        self._rng = rng
        self._lock = threading.Lock()

    def one_way_ms(self) -> float:
        p = self.profile
        with self._lock:
            jitter = self._rng.uniform(-p.jitter_ms, p.jitter_ms) if p.jitter_ms else 0.0
        return max(0.0, p.base_one_way_ms + jitter)

    def fails(self) -> bool:
        p = self.profile
        if p.failure_probability <= 0:
            return False
        with self._lock:
            return self._rng.random() < p.failure_probability


class PathModel:
    """Probe path between a server and a target: request and reply each cross
    both devices' access links.

    Every path has its own random streams, so one server's probes never shift
    the draws seen by another server.
    """

    def __init__(self, seed: int, source: ScenarioDevice, target: ScenarioDevice):
        pair = f"{source.id}->{target.id}"
        self.source = LinkModel(source.link, stream(seed, "link-src", pair))
        self.target = LinkModel(target.link, stream(seed, "link-dst", pair))

    def round_trip_ms(self) -> float | None:
        """None when either link drops the probe."""
        # both links always draw so each stream advances once per probe
        if self.source.fails() | self.target.fails():
            return None
        return self.source.one_way_ms() + self.target.one_way_ms() + self.target.one_way_ms() + self.source.one_way_ms()


class ProfileMeter:
    """Resource readings drawn uniformly around a profile's means, clamped to [0, 100]."""

    def __init__(self, profile: ResourceProfile, rng: random.Random):
        self.profile = profile
        self._rng = rng

    def __call__(self) -> tuple[float, float, int]:
        p = self.profile
        cpu = p.cpu_mean + (self._rng.uniform(-p.cpu_jitter, p.cpu_jitter) if p.cpu_jitter else 0.0)
        mem = p.mem_mean + (self._rng.uniform(-p.mem_jitter, p.mem_jitter) if p.mem_jitter else 0.0)
        return min(max(cpu, 0.0), 100.0), min(max(mem, 0.0), 100.0), p.container_count


class _VirtualSession:
    def __init__(self, delay_ms: float | None, timeout: float, clock):
        self._delay_ms = delay_ms
        self._timeout = timeout
        self._clock = clock

    def echo(self, payload: str) -> str:
        if self._delay_ms is None:
            raise ConnectionResetError("link dropped the probe")
        delay = self._delay_ms / 1000
        if delay > self._timeout:
            self._clock.sleep(self._timeout)
            raise TimeoutError("probe timed out")
        self._clock.sleep(delay)
        return payload

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        pass


class VirtualNetwork:
    """In-process links for virtual-time runs; no sockets involved."""

    def __init__(self, spec: ScenarioSpec, clock):
        self.clock = clock
        self.spec = spec
        self.by_address = {d.record.address: d for d in spec.devices}
        self._paths: dict[tuple[str, str], PathModel] = {}

    def path(self, source_id: str, target_id: str) -> PathModel:
        key = (source_id, target_id)
        if key not in self._paths:
            self._paths[key] = PathModel(self.spec.rng_seed, self.spec.device(source_id), self.spec.device(target_id))
        return self._paths[key]

    def connector(self, source_id: str) -> "VirtualConnector":
        return VirtualConnector(self, source_id)


class VirtualConnector:
    def __init__(self, network: VirtualNetwork, source_id: str):
        self.network = network
        self.source_id = source_id

    def open(self, address: str, credential_ref: str, timeout: float) -> _VirtualSession:
        target: ScenarioDevice | None = self.network.by_address.get(address)
        if target is None:
            raise ConnectionRefusedError(f"nothing listens on {address}")
        if credential_ref != target.record.credential_ref:
            raise AuthRejectedError(f"{address} rejected the credential")
        rtt = self.network.path(self.source_id, target.id).round_trip_ms()
        return _VirtualSession(rtt, timeout, self.network.clock)


class LoopbackNetwork:
    """Real echo servers on 127.0.0.1, one per (server, sensor) link.

    Each server's daemon gets an address map that sends the sensor's
    inventory address to the echo peer modelling that particular link.
    """

    def __init__(self, spec: ScenarioSpec):
        self.servers: list[EchoServer] = []
        self.address_maps: dict[str, dict[str, str]] = {s.id: {} for s in spec.servers}
        for sensor in spec.sensors:
            for server in spec.servers:
                path = PathModel(spec.rng_seed, server, sensor)

                def delay(path=path):
                    rtt = path.round_trip_ms()
                    return None if rtt is None else rtt / 1000

                echo = EchoServer("127.0.0.1:0", sensor.record.credential_ref, reply_delay=delay)
                threading.Thread(target=echo.serve_forever, name=f"echo-{sensor.id}-{server.id}", daemon=True).start()
                self.servers.append(echo)
                self.address_maps[server.id][sensor.record.address] = echo.address

    def close(self) -> None:
        for echo in self.servers:
            echo.shutdown()
            echo.server_close()
