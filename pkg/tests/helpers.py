"""Shared builders for contract-level tests."""
import json

from edgeledger.contracts import default_contracts
from edgeledger.contracts.records import device_key, encode, latency_key, resource_key
from edgeledger.ledger import MapView, TxContext
from edgeledger.ledger.contract import invoke

NOW = 1_700_000_000_000
MINUTE = 60_000


def device(device_id, role="edge-server", gpu=False, active=True):
    return {
        "id": device_id,
        "name": device_id.upper(),
        "role": role,
        "hasGpu": gpu,
        "address": f"10.0.0.{sum(map(ord, device_id)) % 250 + 1}:7022",
        "credentialRef": f"cred-{device_id}",
        "active": active,
    }


class StateBuilder:
    """World state assembled key by key, bypassing the write path.

    Lets property tests create thousands of history entries with arbitrary
    timestamps and then run the real contract queries over them.
    """

    def __init__(self):
        self.state: dict[str, bytes] = {}
        self.registry = {c.name: c for c in default_contracts()}
        self._n = 0

    def _tx(self):
        self._n += 1
        return f"{self._n:032x}"

    def add_device(self, device_id, **kw):
        self.state[device_key(device_id)] = encode(device(device_id, **kw))
        return self

    def add_resource(self, device_id, ts, cpu, mem, containers=0):
        rec = {"deviceId": device_id, "timestampMs": ts, "cpuPercent": cpu, "memoryPercent": mem,
               "containerCount": containers}
        self.state[resource_key(device_id, ts, self._tx())] = encode(rec)
        return self

    def add_latency(self, source_id, target_id, ts, latency_ms):
        rec = {"sourceId": source_id, "targetId": target_id, "timestampMs": ts, "latencyMs": latency_ms}
        self.state[latency_key(target_id, source_id, ts, self._tx())] = encode(rec)
        return self

    def query(self, contract, op, *args):
        ctx = TxContext(MapView(self.state), self.registry, read_only=True)
        return json.loads(invoke(self.registry[contract], ctx, op, [str(a) for a in args]))

    def select(self, target, *, gpu=False, window=10, now=NOW):
        task = json.dumps({"requiresGpu": gpu, "label": ""})
        return self.query("offload", "SelectOffloadServer", target, task, window, now)
