"""Host resource sampling."""
from __future__ import annotations

import logging
from typing import Callable

import psutil

from edgeledger.contracts.records import ResourceSample

log = logging.getLogger(__name__)

# (cpuPercent, memoryPercent, containerCount)
Meter = Callable[[], tuple[float, float, int]]


def no_containers() -> int:
    return 0


class HostMeter:
    """CPU and memory utilisation of this host via psutil.

    CPU is the utilisation since the previous call, so the first reading after
    construction covers the time since construction.
    """

    def __init__(self, container_counter: Callable[[], int] = no_containers):
        self.container_counter = container_counter
        psutil.cpu_percent(interval=None)

    def __call__(self) -> tuple[float, float, int]:
        cpu = psutil.cpu_percent(interval=None)
        mem = psutil.virtual_memory().percent
        return cpu, mem, self.container_counter()


def sample_resources(device_id: str, meter: Meter | None = None) -> ResourceSample | None:
    """Read one sample; None (and a log line) when the metrics are unavailable."""
    meter = meter or HostMeter()
    try:
        cpu, mem, containers = meter()
    except Exception as exc:
        log.warning("resource sampling failed, skipping this tick: %s", exc)
        return None
    return ResourceSample(
        device_id,
        min(max(float(cpu), 0.0), 100.0),
        min(max(float(mem), 0.0), 100.0),
        max(int(containers), 0),
    )
