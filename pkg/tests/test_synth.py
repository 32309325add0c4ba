import hashlib
import json
import math

import numpy as np
import pytest

from flowreport.burst import BurstConfig, candidate_metrics, detect_bursts, rank_root_causes
from flowreport.rag import dns_rag, http_rag, tcp_rag
from flowreport.recordio import open_dataset
from flowreport.synth import (
    BURST_CAUSES,
    ScenarioSpec,
    SpecError,
    generate,
    simulate,
    standard_scenario,
)
from flowreport.timeseries import reconstruct_arrays


def small_spec(seed=3, **kw):
    return ScenarioSpec(seed=seed, duration=120.0, rates={"tcp": 5, "udp": 5, "http": 5, "dns": 5, "icmp": 2}, **kw)


def digests(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


@pytest.mark.parametrize("compress", [False, True])
def test_same_seed_identical_files(tmp_path, compress):
    spec = small_spec(anomalies=[{"kind": "dns_error_server", "server": "10.0.2.1", "error_pct": 20}])
    generate(spec, tmp_path / "a", compress)
    generate(spec, tmp_path / "b", compress)
    da, db = digests(tmp_path / "a"), digests(tmp_path / "b")
    assert da == db
    assert len(da) == 8  # 7 protocols + truth.json


def test_different_seed_differs(tmp_path):
    generate(small_spec(1), tmp_path / "a")
    generate(small_spec(2), tmp_path / "b")
    assert digests(tmp_path / "a")["tcp.records"] != digests(tmp_path / "b")["tcp.records"]


def test_truth_lists_file_hashes(tmp_path):
    truth = generate(small_spec(), tmp_path)
    on_disk = json.loads((tmp_path / "truth.json").read_text())
    assert on_disk == truth
    for name, digest in truth["files"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest


def test_files_parse_and_validate(tmp_path):
    generate(small_spec(), tmp_path)
    ds = open_dataset(tmp_path)
    assert sorted(ds.protocols) == sorted(["mac", "ip", "udp", "tcp", "http", "dns", "icmp"])
    tcp = ds.chain("tcp").materialize()
    ip = ds.chain("ip").materialize()
    udp = ds.chain("udp").materialize()
    assert len(ip) == len(tcp) + len(udp)
    assert np.all(tcp.column("ts_end").values >= tcp.column("ts_start").values)
    assert np.all(tcp.column("retx_s2d").values <= tcp.column("pkts_s2d").values)


@pytest.mark.parametrize("bad,field", [
    ({"duration": 0}, "duration"),
    ({"rates": {"sctp": 1}}, "sctp"),
    ({"anomalies": [{"kind": "meteor"}]}, "kind"),
    ({"anomalies": [{"kind": "burst", "start": 10, "end": 5, "magnitude_bps": 1, "cause": "udp_flows"}]}, "interval"),
    ({"anomalies": [{"kind": "burst", "start": 0, "end": 5, "magnitude_bps": 1, "cause": "x"}]}, "cause"),
    ({"anomalies": [{"kind": "sick_tcp_server", "server": "10.0.0.1", "kpi": "retx_s2d", "level": 150}]}, "level"),
    ({"anomalies": [{"kind": "dns_error_server", "server": "10.0.2.1", "error_pct": 0}]}, "error_pct"),
    ({"anomalies": [{"kind": "slow_http_server", "server": "1.2.3.4", "port": 80, "median_rt": 1}]}, "server"),
    ({"colour": "blue"}, "colour"),
])
def test_invalid_spec_names_field(bad, field):
    with pytest.raises(SpecError, match=field):
        ScenarioSpec.from_dict({"duration": 600, **bad})


def test_spec_json_roundtrip():
    spec = standard_scenario()
    assert ScenarioSpec.from_json(spec.to_json()) == spec


def test_planted_burst_neighbourhood():
    spec = ScenarioSpec(seed=5, duration=400.0, anomalies=[
        {"kind": "burst", "start": 100.0, "end": 160.0, "magnitude_bps": 200e6, "cause": "tcp_connections"}])
    d = simulate(spec)
    ip = d["ip"]
    s = reconstruct_arrays(ip["ts_start"], ip["ts_end"], ip["bytes_a2b"] + ip["bytes_b2a"], 1.0, spec.t0,
                           spec.t0 + spec.duration)
    above = np.flatnonzero(s.values >= 100e6)
    # every bin over the threshold sits inside a few seconds of the planted interval
    assert above.min() >= 100 - 2 and above.max() <= 160 + 2
    inside = s.values[100:159]
    assert (inside >= 100e6).mean() > 0.95
    bursts = [b for b in detect_bursts(s, BurstConfig()) if b.accepted]
    assert len(bursts) == 1
    assert abs(bursts[0].start - (spec.t0 + 100)) <= 2 and abs(bursts[0].end - (spec.t0 + 160)) <= 2


@pytest.mark.parametrize("cause", BURST_CAUSES)
def test_burst_volume_exact(cause):
    spec = ScenarioSpec(seed=1, duration=200.0, anomalies=[
        {"kind": "burst", "start": 50.0, "end": 80.0, "magnitude_bps": 120e6, "cause": cause}])
    base = simulate(ScenarioSpec(seed=1, duration=200.0))
    d = simulate(spec)

    def total(cols):
        return float(cols["bytes_a2b"].sum() + cols["bytes_b2a"].sum())

    extra_bits = 8 * (total(d["ip"]) - total(base["ip"]))
    # ambient draws shift after the burst is planted, so compare against the planted volume loosely
    assert extra_bits == pytest.approx(120e6 * 30, rel=0.1)


@pytest.mark.parametrize("cause", BURST_CAUSES)
def test_root_cause_is_planted_metric(cause):
    spec = ScenarioSpec(seed=11, duration=600.0, anomalies=[
        {"kind": "burst", "start": 250.0, "end": 280.0, "magnitude_bps": 150e6, "cause": cause}])
    d = simulate(spec)
    ip = d["ip"]
    s = reconstruct_arrays(ip["ts_start"], ip["ts_end"], ip["bytes_a2b"] + ip["bytes_b2a"], 1.0, spec.t0,
                           spec.t0 + spec.duration)
    (b,) = [b for b in detect_bursts(s, BurstConfig()) if b.accepted]
    ranking = rank_root_causes(b, candidate_metrics(d, spec.t0, spec.t0 + spec.duration))
    assert ranking[0].metric == cause


def fired_by_entity(rows):
    return {r.entity: r.fired_triggers for r in rows}


@pytest.mark.parametrize("kpi,level", [
    ("retx_s2d", 8.0), ("retx_d2s", 5.0), ("dupack_s2d", 6.0), ("dupack_d2s", 30.0), ("zwin_d2s", 5.0),
    ("cet", 0.2), ("rtt", 1.5), ("downtime", None),
])
def test_sick_server_fires_only_its_trigger(tmp_path, kpi, level):
    a = {"kind": "sick_tcp_server", "server": "10.0.0.4", "kpi": kpi}
    if level is not None:
        a["level"] = level
    spec = ScenarioSpec(seed=2, duration=900.0, anomalies=[a])
    generate(spec, tmp_path)
    tcp = open_dataset(tmp_path).chain("tcp").materialize()
    rows = tcp_rag(tcp, None, spec.t0, spec.t0 + spec.duration)
    fired = fired_by_entity(rows)
    assert kpi in fired["10.0.0.4"]
    for entity, f in fired.items():
        if entity != "10.0.0.4":
            assert kpi not in f, entity
    # the planted server fires nothing unrelated (the connection sentinel
    # accompanies downtime when the server sees many unanswered SYNs)
    assert fired["10.0.0.4"] - {kpi, "connections_sentinel"} == set()


def test_standard_fixture_truth(standard_dataset):
    root, truth = standard_dataset
    ds = open_dataset(root)
    t0, t1 = truth["t0"], truth["t_end"]
    tcp_rows = fired_by_entity(tcp_rag(ds.chain("tcp").materialize(), None, t0, t1))
    http_rows = fired_by_entity(http_rag(ds.chain("http").materialize()))
    dns_rows = fired_by_entity(dns_rag(ds.chain("dns").materialize()))
    tables = {"TCP": tcp_rows, "HTTP": http_rows, "DNS": dns_rows}
    planted = {}
    for a in truth["anomalies"]:
        if "protocol" in a:
            assert a["trigger"] in tables[a["protocol"]][a["entity"]], a
            planted.setdefault(a["protocol"], {})[a["entity"]] = a["trigger"]
    for proto, rows in tables.items():
        for entity, fired in rows.items():
            if entity not in planted.get(proto, {}):
                assert not fired, (proto, entity, fired)
