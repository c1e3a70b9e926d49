import pytest

from edgeledger.clock import ManualClock
from edgeledger.contracts import default_contracts
from edgeledger.ledger import Contract, Ledger, query, transaction

_criteria: dict[int, dict] = {}


class KvContract(Contract):
    """Bare key-value contract for exercising the ledger on its own."""

    name = "kv"

    @transaction("Put")
    def put(self, ctx, key, value):
        ctx.put_state(key, value.encode())
        return key

    @transaction("Delete")
    def delete(self, ctx, key):
        ctx.del_state(key)
        return key

    @query("Get")
    def get(self, ctx, key):
        value = ctx.get_state(key)
        return "" if value is None else value.decode()

    @query("Sneaky")
    def sneaky(self, ctx, key):
        ctx.put_state(key, b"x")
        return key


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def kv_ledger(clock):
    ledger = Ledger([KvContract()], max_txs=10, block_timeout_ms=500, clock=clock, fsync=False)
    yield ledger
    ledger.close()


@pytest.fixture
def app_ledger(clock):
    """Full contract set; every submit commits in its own block."""
    ledger = Ledger(default_contracts(), max_txs=1, clock=clock, fsync=False)
    yield ledger
    ledger.close()


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False})
    if call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception):
        entry["ok"] = False
    if call.when == "call":
        entry["ran"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        verdict = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {entry['title']}")
