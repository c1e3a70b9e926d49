"""Latency Collection: append-only probe history and per-server windowed means."""
from __future__ import annotations

import json
import math
from collections import defaultdict

from edgeledger.contracts.inventory import read_device
from edgeledger.contracts.records import (
    LatencyAnalysis,
    LatencyRecord,
    ServerLatency,
    decode_json,
    encode,
    latency_key,
    parse_now,
    parse_window,
    window_bounds,
)
from edgeledger.errors import DuplicateError, ValidationError
from edgeledger.ledger import Contract, TxContext, query, transaction


def history(ctx: TxContext, target_id: str) -> list[LatencyRecord]:
    return [LatencyRecord.from_dict(json.loads(v), stamped=True) for _, v in ctx.get_range(f"latency:{target_id}:")]


def analyse(records: list[LatencyRecord], target_id: str, window_minutes: float, now_ms: int) -> LatencyAnalysis:
    lo, hi = window_bounds(window_minutes, now_ms)
    by_source: dict[str, list[int]] = defaultdict(list)
    for rec in records:
        # failed probes stay on the ledger but never enter a mean
        if rec.target_id == target_id and not rec.failed and lo <= rec.timestamp_ms <= hi:
            by_source[rec.source_id].append(rec.latency_ms)
    per_server = tuple(
        ServerLatency(source, math.fsum(values) / len(values), len(values))
        for source, values in sorted(by_source.items())
    )
    return LatencyAnalysis(target_id, window_minutes, per_server)


class LatencyContract(Contract):
    name = "latency"

    @transaction("PutLatencyMeasurements")
    def put_measurements(self, ctx: TxContext, payload: str) -> str:
        batch = decode_json(payload, "latency batch")
        if not isinstance(batch, list) or not batch:
            raise ValidationError("latency batch must be a non-empty list")
        records = [LatencyRecord.from_dict(item) for item in batch]
        pairs = set()
        for rec in records:
            if (rec.target_id, rec.source_id) in pairs:
                raise ValidationError(f"duplicate measurement {rec.source_id}->{rec.target_id} in one batch")
            pairs.add((rec.target_id, rec.source_id))
            read_device(ctx, rec.source_id)
            read_device(ctx, rec.target_id)
        for rec in records:
            key = latency_key(rec.target_id, rec.source_id, ctx.timestamp_ms, ctx.tx_id)
            if ctx.get_state(key) is not None:
                raise DuplicateError(f"history key {key} already written")
            stamped = LatencyRecord(rec.source_id, rec.target_id, rec.latency_ms, ctx.timestamp_ms)
            ctx.put_state(key, encode(stamped.to_dict()))
        return str(len(records))

    @query("AnalyseLatencyToTarget")
    def analyse_latency(self, ctx: TxContext, target_id: str, window_minutes: str, now_ms: str) -> str:
        window, now = parse_window(window_minutes), parse_now(now_ms)
        read_device(ctx, target_id)
        return encode(analyse(history(ctx, target_id), target_id, window, now).to_dict()).decode()

    @query("GetLatencyHistory")
    def latency_history(self, ctx: TxContext, target_id: str) -> str:
        read_device(ctx, target_id)
        return json.dumps([r.to_dict() for r in history(ctx, target_id)], separators=(",", ":"))
