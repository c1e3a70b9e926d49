"""Resource Collection: append-only usage history and windowed averages."""
from __future__ import annotations

import json
import math

from edgeledger.contracts.inventory import read_device
from edgeledger.contracts.records import (
    ResourceAnalysis,
    ResourceSample,
    decode_json,
    encode,
    parse_now,
    parse_window,
    resource_key,
    window_bounds,
)
from edgeledger.errors import DuplicateError
from edgeledger.ledger import Contract, TxContext, query, transaction


def history(ctx: TxContext, device_id: str) -> list[ResourceSample]:
    return [
        ResourceSample.from_dict(json.loads(v), stamped=True)
        for _, v in ctx.get_range(f"resource:{device_id}:")
    ]


def analyse(samples: list[ResourceSample], device_id: str, window_minutes: float, now_ms: int) -> ResourceAnalysis:
    lo, hi = window_bounds(window_minutes, now_ms)
    inside = [s for s in samples if lo <= s.timestamp_ms <= hi]
    n = len(inside)
    if n == 0:
        return ResourceAnalysis(device_id, window_minutes, 0)
    return ResourceAnalysis(
        device_id,
        window_minutes,
        n,
        avg_cpu=math.fsum(s.cpu_percent for s in inside) / n,
        avg_memory=math.fsum(s.memory_percent for s in inside) / n,
        avg_containers=math.fsum(s.container_count for s in inside) / n,
    )


class ResourceContract(Contract):
    name = "resource"

    @transaction("PutResourceSample")
    def put_sample(self, ctx: TxContext, payload: str) -> str:
        sample = ResourceSample.from_dict(decode_json(payload, "resource sample"))
        read_device(ctx, sample.device_id)
        key = resource_key(sample.device_id, ctx.timestamp_ms, ctx.tx_id)
        if ctx.get_state(key) is not None:
            raise DuplicateError(f"history key {key} already written")
        stamped = ResourceSample(
            sample.device_id, sample.cpu_percent, sample.memory_percent, sample.container_count, ctx.timestamp_ms
        )
        ctx.put_state(key, encode(stamped.to_dict()))
        return key

    @query("AnalyseResources")
    def analyse_resources(self, ctx: TxContext, device_id: str, window_minutes: str, now_ms: str) -> str:
        window, now = parse_window(window_minutes), parse_now(now_ms)
        read_device(ctx, device_id)
        return encode(analyse(history(ctx, device_id), device_id, window, now).to_dict()).decode()

    @query("GetResourceHistory")
    def resource_history(self, ctx: TxContext, device_id: str) -> str:
        read_device(ctx, device_id)
        return json.dumps([s.to_dict() for s in history(ctx, device_id)], separators=(",", ":"))
