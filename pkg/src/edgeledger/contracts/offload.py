"""Offload Selection: rank edge servers for a task originating at a sensor."""
from __future__ import annotations

import json
from typing import Iterable

from edgeledger.contracts.inventory import read_device, require_role
from edgeledger.contracts.records import (
    ROLE_SENSOR,
    DeviceRecord,
    LatencyAnalysis,
    ResourceAnalysis,
    SelectionEntry,
    TaskProperties,
    decode_json,
    parse_now,
    parse_window,
)
from edgeledger.errors import NoEligibleServerError
from edgeledger.ledger import Contract, TxContext, query


def rank_entries(entries: Iterable[SelectionEntry]) -> list[SelectionEntry]:
    """Ascending latency, then CPU, memory, containers; server id makes it total."""
    return sorted(entries, key=SelectionEntry.sort_key)


def remove_unused_servers(servers: list[DeviceRecord], latency: LatencyAnalysis) -> list[DeviceRecord]:
    measured = {s.source_id for s in latency.per_server}
    return [s for s in servers if s.id in measured]


def combine_analysis(resources: list[ResourceAnalysis], latency: LatencyAnalysis) -> list[SelectionEntry]:
    entries = []
    for res in resources:
        lat = latency.for_server(res.device_id)
        if lat is None or res.sample_count == 0:
            continue
        entries.append(SelectionEntry(res.device_id, lat.avg_latency_ms, res.avg_cpu, res.avg_memory, res.avg_containers))
    return entries


class OffloadContract(Contract):
    name = "offload"

    @query("SelectOffloadServer")
    def select(self, ctx: TxContext, target_id: str, task_json: str, window_minutes: str, now_ms: str) -> str:
        window, now = parse_window(window_minutes), parse_now(now_ms)
        task = TaskProperties.from_dict(decode_json(task_json, "task"))
        require_role(read_device(ctx, target_id), ROLE_SENSOR)

        latency = LatencyAnalysis.from_dict(
            json.loads(ctx.invoke("latency", "AnalyseLatencyToTarget", target_id, str(window), str(now)))
        )
        listing = "GetServerListGPU" if task.requires_gpu else "GetServerList"
        servers = [DeviceRecord.from_dict(d) for d in json.loads(ctx.invoke("inventory", listing))]
        candidates = remove_unused_servers(servers, latency)
        resources = [
            ResourceAnalysis.from_dict(
                json.loads(ctx.invoke("resource", "AnalyseResources", s.id, str(window), str(now)))
            )
            for s in candidates
        ]
        ranked = rank_entries(combine_analysis(resources, latency))
        if not ranked:
            raise NoEligibleServerError(f"no eligible edge node for target {target_id!r}")
        return json.dumps([e.to_dict() for e in ranked], separators=(",", ":"))
