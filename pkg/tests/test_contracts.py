import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeledger.contracts.offload import rank_entries
from edgeledger.contracts.records import (
    DeviceRecord,
    LatencyRecord,
    ResourceSample,
    SelectionEntry,
    device_key,
    latency_key,
    parse_address,
    parse_window,
    resource_key,
    window_bounds,
)
from edgeledger.errors import (
    DuplicateError,
    NoEligibleServerError,
    NotFoundError,
    UnknownOperationError,
    ValidationError,
)
from helpers import MINUTE, NOW, StateBuilder, device


def create(ledger, record):
    return ledger.submit("inventory", "CreateDevice", [json.dumps(record)])


def evaluate(ledger, contract, op, *args):
    return json.loads(ledger.evaluate(contract, op, [str(a) for a in args]))


@pytest.fixture
def inventory(app_ledger):
    create(app_ledger, device("hfn", gpu=True))
    create(app_ledger, device("upboard"))
    create(app_ledger, device("rpi3"))
    create(app_ledger, device("rpi4", role="sensor"))
    return app_ledger


# -- key schema --------------------------------------------------------------------

def test_key_schema_is_bit_exact():
    tx = "a" * 32
    assert device_key("rpi4") == "device:rpi4"
    assert resource_key("hfn", 1234, tx) == f"resource:hfn:00000000000000001234:{tx}"
    assert latency_key("rpi4", "hfn", 1234, tx) == f"latency:rpi4:hfn:00000000000000001234:{tx}"


# -- inventory ---------------------------------------------------------------------

def test_device_crud_round_trip(app_ledger):
    record = device("upboard")
    tx = create(app_ledger, record)
    assert [k for k, _ in tx.writes] == ["device:upboard"]
    assert evaluate(app_ledger, "inventory", "ReadDevice", "upboard") == record
    updated = dict(record, name="Up Board Squared", active=False)
    app_ledger.submit("inventory", "UpdateDevice", [json.dumps(updated)])
    assert evaluate(app_ledger, "inventory", "ReadDevice", "upboard") == updated
    app_ledger.submit("inventory", "DeleteDevice", ["upboard"])
    with pytest.raises(NotFoundError):
        app_ledger.evaluate("inventory", "ReadDevice", ["upboard"])
    assert app_ledger.blocks[-1].txs[0].writes == (("device:upboard", None),)


def test_duplicate_and_missing_devices(app_ledger):
    create(app_ledger, device("upboard"))
    with pytest.raises(DuplicateError):
        create(app_ledger, device("upboard"))
    with pytest.raises(NotFoundError):
        app_ledger.submit("inventory", "UpdateDevice", [json.dumps(device("ghost"))])
    with pytest.raises(NotFoundError):
        app_ledger.submit("inventory", "DeleteDevice", ["ghost"])


@pytest.mark.parametrize(
    "patch",
    [
        {"id": ""},
        {"id": "has:colon"},
        {"role": "robot"},
        {"hasGpu": "yes"},
        {"address": "no-port"},
        {"address": "host:99999"},
        {"extra": 1},
    ],
)
def test_invalid_device_records(app_ledger, patch):
    with pytest.raises(ValidationError):
        create(app_ledger, dict(device("x"), **patch))


def test_missing_device_field_rejected(app_ledger):
    record = device("x")
    del record["credentialRef"]
    with pytest.raises(ValidationError):
        create(app_ledger, record)


def test_server_lists(inventory):
    servers = evaluate(inventory, "inventory", "GetServerList")
    assert [d["id"] for d in servers] == ["hfn", "rpi3", "upboard"]
    assert [d["id"] for d in evaluate(inventory, "inventory", "GetServerListGPU")] == ["hfn"]
    assert [d["id"] for d in evaluate(inventory, "inventory", "GetSensorList")] == ["rpi4"]


def test_server_list_empty_inventory(app_ledger):
    assert evaluate(app_ledger, "inventory", "GetServerList") == []
    assert evaluate(app_ledger, "inventory", "GetServerListGPU") == []


def test_inactive_servers_are_not_listed(inventory):
    inventory.submit("inventory", "UpdateDevice", [json.dumps(device("rpi3", active=False))])
    assert [d["id"] for d in evaluate(inventory, "inventory", "GetServerList")] == ["hfn", "upboard"]


def test_probe_targets_only_for_servers(inventory):
    targets = evaluate(inventory, "inventory", "GetProbeTargets", "hfn")
    assert targets == [{"targetId": "rpi4", "address": device("rpi4")["address"], "credentialRef": "cred-rpi4"}]
    assert evaluate(inventory, "inventory", "GetProbeTargets", "rpi4") == []
    with pytest.raises(NotFoundError):
        inventory.evaluate("inventory", "GetProbeTargets", ["ghost"])


def test_parse_address_forms():
    assert parse_address("10.0.0.1:7022") == ("10.0.0.1", 7022)
    assert parse_address("[::1]:80") == ("::1", 80)
    for bad in ("", "host", ":80", "host:0x50", "[::1]", "::1:80"):
        with pytest.raises(ValueError):
            parse_address(bad)


# -- resources ---------------------------------------------------------------------

def sample(device_id, cpu=2.0, mem=9.0, containers=1):
    return json.dumps({"deviceId": device_id, "cpuPercent": cpu, "memoryPercent": mem, "containerCount": containers})


def test_resource_sample_stored_under_history_key(inventory):
    tx = inventory.submit("resource", "PutResourceSample", [sample("upboard")])
    key = tx.result
    assert key == resource_key("upboard", tx.timestamp_ms, tx.tx_id)
    stored = json.loads(inventory.get(key))
    assert stored["timestampMs"] == tx.timestamp_ms
    assert [k for k, _ in inventory.range_query("resource:upboard:")] == [key]


def test_five_samples_come_back_time_ordered(inventory, clock):
    oracle = []
    for i in range(5):
        clock.advance(1)
        tx = inventory.submit("resource", "PutResourceSample", [sample("upboard", cpu=float(i))])
        oracle.append((tx.timestamp_ms, float(i)))
    history = evaluate(inventory, "resource", "GetResourceHistory", "upboard")
    assert [(h["timestampMs"], h["cpuPercent"]) for h in history] == oracle


@pytest.mark.parametrize("cpu,mem,containers", [(101, 9, 0), (-0.1, 9, 0), (2, 100.5, 0), (2, 9, -1), (2, 9, 1.5)])
def test_resource_range_checks(inventory, cpu, mem, containers):
    with pytest.raises(ValidationError):
        inventory.submit("resource", "PutResourceSample", [sample("upboard", cpu, mem, containers)])


def test_resource_sample_rejects_unknown_device_and_client_timestamp(inventory):
    with pytest.raises(NotFoundError):
        inventory.submit("resource", "PutResourceSample", [sample("ghost")])
    stamped = json.loads(sample("upboard"))
    stamped["timestampMs"] = 5
    with pytest.raises(ValidationError):
        inventory.submit("resource", "PutResourceSample", [json.dumps(stamped)])


def test_analyse_resources_matches_upboard_row():
    b = StateBuilder().add_device("upboard")
    for i, cpu in enumerate((2.0, 2.1, 2.14)):
        b.add_resource("upboard", NOW - i * MINUTE, cpu, 9.39, 2)
    res = b.query("resource", "AnalyseResources", "upboard", 10, NOW)
    assert res["sampleCount"] == 3
    assert res["avgCpu"] == pytest.approx(2.08, abs=0.005)
    assert res["avgContainers"] == 2


def test_analyse_resources_empty_window_omits_averages():
    b = StateBuilder().add_device("upboard").add_resource("upboard", NOW - 11 * MINUTE, 2.0, 9.0)
    res = b.query("resource", "AnalyseResources", "upboard", 10, NOW)
    assert res == {"deviceId": "upboard", "windowMinutes": 10, "sampleCount": 0}


def test_analyse_resources_window_is_closed_on_both_ends():
    b = StateBuilder().add_device("d")
    b.add_resource("d", NOW - 10 * MINUTE, 10.0, 10.0)
    b.add_resource("d", NOW, 20.0, 20.0)
    b.add_resource("d", NOW - 10 * MINUTE - 1, 90.0, 90.0)
    b.add_resource("d", NOW + 1, 90.0, 90.0)
    res = b.query("resource", "AnalyseResources", "d", 10, NOW)
    assert (res["sampleCount"], res["avgCpu"]) == (2, 15.0)


def test_analyse_resources_unknown_device():
    with pytest.raises(NotFoundError):
        StateBuilder().query("resource", "AnalyseResources", "ghost", 10, NOW)


@pytest.mark.parametrize("window", ["0", "-1", "abc", "nan", "inf"])
def test_bad_windows_rejected(window):
    b = StateBuilder().add_device("d")
    with pytest.raises(ValidationError):
        b.query("resource", "AnalyseResources", "d", window, NOW)


def test_fractional_window_parses():
    assert parse_window("10") == 10 and isinstance(parse_window("10"), int)
    assert parse_window("0.5") == 0.5
    assert window_bounds(1 / 3, 60_000) == (40_000, 60_000)


# -- latency -----------------------------------------------------------------------

def batch(*records):
    return json.dumps([{"sourceId": s, "targetId": t, "latencyMs": ms} for s, t, ms in records])


def test_latency_batch_of_three(inventory):
    tx = inventory.submit("latency", "PutLatencyMeasurements", [batch(("hfn", "rpi4", 274), ("upboard", "rpi4", 273), ("rpi3", "rpi4", 281))])
    assert tx.result == "3"
    assert len(inventory.range_query("latency:rpi4:")) == 3
    assert all(k.startswith("latency:") for k, _ in tx.writes)


@pytest.mark.parametrize(
    "records",
    [
        [("hfn", "rpi4", 270), ("upboard", "rpi4", -2)],
        [("hfn", "rpi4", 270), ("ghost", "rpi4", 1)],
        [("hfn", "rpi4", 270), ("hfn", "rpi4", 271)],
    ],
)
def test_invalid_record_rejects_whole_batch(inventory, records):
    digest = inventory.state_digest()
    with pytest.raises((ValidationError, NotFoundError)):
        inventory.submit("latency", "PutLatencyMeasurements", [batch(*records)])
    assert inventory.state_digest() == digest


def test_empty_or_malformed_batch(inventory):
    for payload in ("[]", "{}", "not json", json.dumps([{"sourceId": "hfn", "targetId": "rpi4", "latencyMs": 1.5}])):
        with pytest.raises(ValidationError):
            inventory.submit("latency", "PutLatencyMeasurements", [payload])


def test_failed_probe_is_stored_but_not_averaged(inventory, clock):
    inventory.submit("latency", "PutLatencyMeasurements", [batch(("hfn", "rpi4", -1), ("upboard", "rpi4", 270))])
    inventory.submit("latency", "PutLatencyMeasurements", [batch(("upboard", "rpi4", 276))])
    history = evaluate(inventory, "latency", "GetLatencyHistory", "rpi4")
    assert sorted(h["latencyMs"] for h in history) == [-1, 270, 276]
    analysis = evaluate(inventory, "latency", "AnalyseLatencyToTarget", "rpi4", 10, clock.now_ms())
    assert analysis["perServer"] == [{"sourceId": "upboard", "avgLatencyMs": 273.0, "sampleCount": 2}]


def test_latency_analysis_empty_and_unknown_target():
    b = StateBuilder().add_device("rpi4", role="sensor")
    assert b.query("latency", "AnalyseLatencyToTarget", "rpi4", 10, NOW)["perServer"] == []
    with pytest.raises(NotFoundError):
        b.query("latency", "AnalyseLatencyToTarget", "ghost", 10, NOW)


def test_latency_record_sentinel():
    assert LatencyRecord.from_dict({"sourceId": "a", "targetId": "b", "latencyMs": -1}).failed
    with pytest.raises(ValidationError):
        LatencyRecord.from_dict({"sourceId": "a", "targetId": "b", "latencyMs": -5})
    with pytest.raises(ValidationError):
        LatencyRecord.from_dict({"sourceId": "a", "targetId": "b", "latencyMs": True})


def test_record_round_trips():
    rec = DeviceRecord.from_dict(device("hfn", gpu=True))
    assert DeviceRecord.from_dict(rec.to_dict()) == rec
    s = ResourceSample("hfn", 1.5, 2.5, 3, 10)
    assert ResourceSample.from_dict(s.to_dict(), stamped=True) == s


# -- selection ---------------------------------------------------------------------

EXP1_MEANS = {"hfn": (274.40, 4.97, 29.13), "upboard": (273.08, 2.08, 9.39), "rpi3": (280.80, 4.88, 14.36)}
EXP3_MEANS = {"hfn": (276.18, 5.49, 29.62), "upboard": (306.62, 4.52, 9.05), "rpi3": (357.07, 11.82, 13.57)}


def means_state(table):
    """One server per row, each with two samples averaging to the row's values."""
    b = StateBuilder().add_device("rpi4", role="sensor")
    for sid, (lat, cpu, mem) in table.items():
        b.add_device(sid, gpu=sid == "hfn")
        # latencies are integers on the wire; the reference mean is hit through a fractional average
        lo = int(lat)
        frac = round(lat - lo, 2)
        n = 100
        ups = round(frac * n)
        for i in range(n):
            b.add_latency(sid, "rpi4", NOW - 1000 - i, lo + (1 if i < ups else 0))
        b.add_resource(sid, NOW - 1000, cpu, mem)
    return b


@pytest.mark.parametrize("table,winner", [(EXP1_MEANS, "upboard"), (EXP3_MEANS, "hfn")])
def test_selection_reproduces_reference_winners(table, winner):
    entries = means_state(table).select("rpi4")
    assert entries[0]["serverId"] == winner
    for e in entries:
        assert e["avgLatencyMs"] == pytest.approx(table[e["serverId"]][0], abs=1e-9)


def test_gpu_filter_dominates_latency():
    entries = means_state(EXP3_MEANS | {"hfn": (999.0, 50.0, 50.0)}).select("rpi4", gpu=True)
    assert [e["serverId"] for e in entries] == ["hfn"]


def test_selection_requires_sensor_target():
    b = means_state(EXP1_MEANS)
    with pytest.raises(ValidationError):
        b.select("hfn")
    with pytest.raises(NotFoundError):
        b.select("ghost")


def test_no_eligible_server():
    b = StateBuilder().add_device("rpi4", role="sensor").add_device("hfn")
    b.add_resource("hfn", NOW, 1, 1)
    with pytest.raises(NoEligibleServerError):
        b.select("rpi4")
    b.add_latency("hfn", "rpi4", NOW - 11 * MINUTE, 100)
    with pytest.raises(NoEligibleServerError):
        b.select("rpi4")


def test_server_without_resource_samples_is_dropped():
    b = StateBuilder().add_device("rpi4", role="sensor").add_device("a").add_device("b")
    b.add_latency("a", "rpi4", NOW, 10).add_latency("b", "rpi4", NOW, 20)
    b.add_resource("b", NOW, 1, 1)
    assert [e["serverId"] for e in b.select("rpi4")] == ["b"]


def test_exact_latency_ties_fall_through_to_cpu_then_id():
    b = StateBuilder().add_device("rpi4", role="sensor")
    for sid, cpu, mem in (("c", 1.0, 5.0), ("a", 2.0, 1.0), ("b", 1.0, 5.0), ("d", 1.0, 4.0)):
        b.add_device(sid).add_latency(sid, "rpi4", NOW, 100).add_resource(sid, NOW, cpu, mem)
    assert [e["serverId"] for e in b.select("rpi4")] == ["d", "b", "c", "a"]


def test_selection_unknown_operation_and_bad_task():
    b = means_state(EXP1_MEANS)
    with pytest.raises(UnknownOperationError):
        b.query("offload", "Nope")
    with pytest.raises(ValidationError):
        b.query("offload", "SelectOffloadServer", "rpi4", "{}", 10, NOW)
    with pytest.raises(ValidationError):
        b.query("offload", "SelectOffloadServer", "rpi4", "[]", 10, NOW)


def test_selection_is_deterministic():
    b = means_state(EXP1_MEANS)
    assert b.select("rpi4") == b.select("rpi4")


# -- properties --------------------------------------------------------------------

server_ids = st.lists(st.sampled_from(["s0", "s1", "s2", "s3", "s4", "s5"]), min_size=1, max_size=6, unique=True)


@st.composite
def random_ledger(draw):
    """Servers with a random mix of fresh, stale, failed and missing measurements."""
    b = StateBuilder().add_device("t", role="sensor")
    servers = draw(server_ids)
    fresh = set()
    for sid in servers:
        b.add_device(sid, gpu=draw(st.booleans()))
        b.add_resource(sid, NOW - draw(st.integers(0, 9 * MINUTE)), draw(st.floats(0, 100)), draw(st.floats(0, 100)))
        for _ in range(draw(st.integers(0, 4))):
            ts = NOW - draw(st.integers(0, 20 * MINUTE))
            ok = draw(st.booleans())
            b.add_latency(sid, "t", ts, draw(st.integers(0, 5000)) if ok else -1)
            if ok and ts >= NOW - 10 * MINUTE:
                fresh.add(sid)
    return b, servers, fresh


def selected_ids(b, **kw):
    try:
        return [e["serverId"] for e in b.select("t", **kw)]
    except NoEligibleServerError:
        return []


@settings(max_examples=200, deadline=None)
@given(random_ledger(), st.booleans())
def test_staleness_filter_property(world, gpu):
    b, servers, fresh = world
    out = selected_ids(b, gpu=gpu)
    assert set(out) <= fresh
    if not gpu:
        assert set(out) == fresh  # every fresh server also has a resource sample
    else:
        gpu_servers = {s for s in servers if json.loads(b.state[device_key(s)])["hasGpu"]}
        assert set(out) == fresh & gpu_servers


@settings(max_examples=200, deadline=None)
@given(random_ledger(), st.sampled_from([2, 3, 10]))
def test_argmin_invariant_under_latency_scaling(world, factor):
    b, _, _ = world
    before = selected_ids(b)
    scaled = StateBuilder()
    for key, value in b.state.items():
        rec = json.loads(value)
        if key.startswith("latency:") and rec["latencyMs"] >= 0:
            rec["latencyMs"] *= factor
        scaled.state[key] = json.dumps(rec).encode()
    assert selected_ids(scaled) == before


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)),
                min_size=1, max_size=6))
def test_rank_entries_is_total_and_sorted(rows):
    entries = [SelectionEntry(f"s{i}", float(a), float(b), float(c), float(d)) for i, (a, b, c, d) in enumerate(rows)]
    ranked = rank_entries(reversed(entries))
    assert sorted(e.server_id for e in ranked) == sorted(e.server_id for e in entries)
    for x, y in zip(ranked, ranked[1:]):
        assert x.sort_key() < y.sort_key()


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-2 * MINUTE, 15 * MINUTE), st.integers(0, 10_000)), max_size=30))
def test_latency_mean_matches_fraction_oracle(records):
    b = StateBuilder().add_device("t", role="sensor").add_device("s")
    for offset, value in records:
        b.add_latency("s", "t", NOW - offset, value if value % 7 else -1)
    kept = [Fraction(v) for off, v in records if 0 <= off <= 10 * MINUTE and v % 7]
    per_server = b.query("latency", "AnalyseLatencyToTarget", "t", 10, NOW)["perServer"]
    if not kept:
        assert per_server == []
    else:
        assert per_server[0]["sampleCount"] == len(kept)
        assert per_server[0]["avgLatencyMs"] == pytest.approx(float(sum(kept) / len(kept)), rel=1e-9)
