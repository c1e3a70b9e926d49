"""The four offloading contracts and their record types."""
from edgeledger.contracts.inventory import InventoryContract
from edgeledger.contracts.latency import LatencyContract
from edgeledger.contracts.offload import OffloadContract, rank_entries
from edgeledger.contracts.records import (
    FAILED_PROBE,
    ROLE_SENSOR,
    ROLE_SERVER,
    DeviceRecord,
    LatencyAnalysis,
    LatencyRecord,
    ResourceAnalysis,
    ResourceSample,
    SelectionEntry,
    ServerLatency,
    TaskProperties,
    parse_address,
)
from edgeledger.contracts.resources import ResourceContract


def default_contracts():
    return [InventoryContract(), ResourceContract(), LatencyContract(), OffloadContract()]


__all__ = [
    "FAILED_PROBE",
    "ROLE_SENSOR",
    "ROLE_SERVER",
    "DeviceRecord",
    "InventoryContract",
    "LatencyAnalysis",
    "LatencyContract",
    "LatencyRecord",
    "OffloadContract",
    "ResourceAnalysis",
    "ResourceContract",
    "ResourceSample",
    "SelectionEntry",
    "ServerLatency",
    "TaskProperties",
    "default_contracts",
    "parse_address",
    "rank_entries",
]
