import gzip
import shutil
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowreport.recordio import (
    ChainError,
    DatasetError,
    ParseError,
    RecordBatch,
    RowCapExceeded,
    col,
    open_dataset,
    scan_stats,
    write_columns,
)
from flowreport.config import Config

from conftest import random_tcp_columns


def _write_tcp(path, rows):
    from flowreport.records import SCHEMAS

    names = [n for n, _ in SCHEMAS["tcp"]]
    lines = ["#" + "\t".join(names)]
    for r in rows:
        d = {n: "1" for n in names}
        d.update({"ts_start": "0.0", "ts_end": "1.0", "src_ip": "10.0.0.1", "dst_ip": "10.0.0.2",
                  "cet_s": "", "rtt_s": ""})
        d.update({k: str(v) for k, v in r.items()})
        lines.append("\t".join(d[n] for n in names))
    path.write_text("\n".join(lines) + "\n")


def test_open_dataset_manifest(tmp_path):
    _write_tcp(tmp_path / "tcp.records", [{}])
    (tmp_path / "http.records").write_text(
        "#ts\tclient_ip\tserver_ip\tserver_port\tmethod\turl\tresponse_code\tresponse_time_s\n"
    )
    (tmp_path / "notes.txt").write_text("ignored")
    ds = open_dataset(tmp_path)
    assert sorted(ds.manifest) == ["http", "tcp"]


def test_open_empty_directory(tmp_path):
    ds = open_dataset(tmp_path)
    assert ds.manifest == {}
    assert ds.protocols == []


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        open_dataset(tmp_path / "nope")


def test_duplicate_protocol_files(tmp_path):
    _write_tcp(tmp_path / "tcp.records", [{}])
    with open(tmp_path / "tcp.records", "rb") as src, gzip.open(tmp_path / "tcp.records.gz", "wb") as dst:
        shutil.copyfileobj(src, dst)
    with pytest.raises(DatasetError, match="duplicate"):
        open_dataset(tmp_path)


@pytest.mark.parametrize("header", ["ts\tclient_ip\n", "#ts\t\tx\n", "#ts\tts\n", "#ts\tclient_ip\n"])
def test_malformed_headers(tmp_path, header):
    (tmp_path / "dns.records").write_text(header)
    with pytest.raises(DatasetError):
        open_dataset(tmp_path)


def test_arity_mismatch_reports_line(tmp_path, backend):
    (tmp_path / "icmp.records").write_text(
        "#ts\tsrc_ip\tdst_ip\ticmp_type\ticmp_code\tcount\n"
        "1.0\ta\tb\t3\t1\t1\n"
        "2.0\ta\tb\t3\t1\t1\textra\n"
    )
    ds = open_dataset(tmp_path)  # header only; no rows read yet
    with pytest.raises(ParseError) as exc:
        ds.chain("icmp").materialize()
    assert exc.value.line == 3
    assert "expected 6 fields, got 7" in str(exc.value)


def test_type_error_identifies_row_and_column(tmp_path, backend):
    (tmp_path / "icmp.records").write_text(
        "#ts\tsrc_ip\tdst_ip\ticmp_type\ticmp_code\tcount\n"
        "1.0\ta\tb\t3\t1\t1\n"
        "2.0\ta\tb\tthree\t1\t1\n"
    )
    with pytest.raises(ParseError) as exc:
        open_dataset(tmp_path).chain("icmp").materialize()
    assert (exc.value.line, exc.value.column) == (3, "icmp_type")


def test_skip_bad_rows_counts(tmp_path, backend):
    (tmp_path / "icmp.records").write_text(
        "#ts\tsrc_ip\tdst_ip\ticmp_type\ticmp_code\tcount\n"
        "1.0\ta\tb\t3\t1\t1\n"
        "2.0\ta\tb\tthree\t1\t1\n"
        "3.0\ta\tb\t3\n"
        "4.0\ta\tb\t0\t0\t2\n"
    )
    ds = open_dataset(tmp_path, Config({"io.skip_bad_rows": True}))
    batch = ds.chain("icmp").materialize()
    assert len(batch) == 2
    assert ds.stats["icmp"].rows_skipped == 2


def test_filter_count_hand_case(tmp_path, backend):
    _write_tcp(tmp_path / "tcp.records", [{"dst_port": 443}, {"dst_port": 80}, {"dst_port": 22}])
    ds = open_dataset(tmp_path)
    assert ds.chain("tcp").filter(dst_port=80).count() == 1


def test_absent_values_stay_absent(tmp_path):
    _write_tcp(tmp_path / "tcp.records", [{"cet_s": "0.0"}, {}])
    b = open_dataset(tmp_path).chain("tcp").materialize()
    assert b["cet_s"].absent.tolist() == [False, True]
    # comparisons never match absent values
    ds = open_dataset(tmp_path)
    assert ds.chain("tcp").filter(col("cet_s") >= 0).count() == 1
    assert ds.chain("tcp").filter(col("cet_s").is_absent()).count() == 1


def test_group_sum_matches_row_loop_oracle(tcp_dir, backend):
    path, cols, _ = tcp_dir
    ds = open_dataset(path, Config({"io.block_bytes": 4096}))  # many blocks
    out = ds.chain("tcp").group_aggregate(["dst_ip"], {"b": ("sum", "bytes_s2d")}).materialize()
    got = dict(zip(out["dst_ip"].values.tolist(), out["b"].values.tolist()))
    oracle = defaultdict(int)
    for ip, b in zip(cols["dst_ip"], cols["bytes_s2d"]):
        oracle[ip] += int(b)
    assert got == dict(oracle)
    # aggregation totals: sum over groups equals global sum
    assert sum(got.values()) == int(np.sum(cols["bytes_s2d"]))


def test_group_all_aggregations_vs_oracle(tcp_dir):
    path, cols, absent = tcp_dir
    ds = open_dataset(path, Config({"io.block_bytes": 8192}))
    aggs = {f: (f, "cet_s") for f in ("sum", "mean", "min", "max", "median", "stddev")}
    aggs["count"] = ("count", "cet_s")
    aggs["rows"] = ("count", None)
    out = ds.chain("tcp").group_aggregate(["dst_ip", "dst_port"], aggs).materialize()
    vals = defaultdict(list)
    rows = defaultdict(int)
    for ip, port, c, a in zip(cols["dst_ip"], cols["dst_port"], cols["cet_s"], absent["cet_s"]):
        rows[(ip, int(port))] += 1
        if not a:
            vals[(ip, int(port))].append(round(float(c), 6))
    for r in out.to_dicts():
        key = (r["dst_ip"], r["dst_port"])
        v = np.array(vals[key])
        assert r["rows"] == rows[key]
        assert r["count"] == len(v)
        assert r["sum"] == pytest.approx(v.sum(), rel=1e-12)
        assert r["mean"] == pytest.approx(v.mean(), rel=1e-12)
        assert r["min"] == v.min() and r["max"] == v.max()
        assert r["median"] == pytest.approx(np.median(v), rel=1e-12)
        assert r["stddev"] == pytest.approx(np.std(v), rel=1e-9, abs=1e-15)


def test_top_n_matches_full_sort(tmp_path, backend):
    rng = np.random.default_rng(3)
    n = 500
    cols = {
        "ts_start": np.arange(n, dtype=float), "ts_end": np.arange(n, dtype=float) + 1,
        "endpoint_a": np.array([f"a{i}" for i in range(n)], dtype=object),
        "endpoint_b": np.array([f"b{i}" for i in range(n)], dtype=object),
        "pkts_a2b": rng.integers(1, 10, n), "pkts_b2a": rng.integers(1, 10, n),
        "bytes_a2b": rng.integers(0, 10**9, n), "bytes_b2a": rng.integers(0, 10**9, n),
    }
    write_columns(tmp_path / "ip.records", "ip", cols)
    ds = open_dataset(tmp_path, Config({"io.block_bytes": 2048}))
    top = ds.chain("ip").top_n("bytes_a2b", 10).materialize()
    full = np.sort(ds.chain("ip").materialize()["bytes_a2b"].values)[::-1][:10]
    assert top["bytes_a2b"].values.tolist() == full.tolist()
    asc = ds.chain("ip").top_n("bytes_a2b", 3, order="asc").materialize()
    assert asc["bytes_a2b"].values.tolist() == np.sort(cols["bytes_a2b"])[:3].tolist()


def test_chain_schema_checked_at_build_time(tcp_dir):
    path, _, _ = tcp_dir
    c = open_dataset(path).chain("tcp")
    with pytest.raises(ChainError):
        c.project(["src_ip"]).filter(dst_port=80)
    with pytest.raises(ChainError):
        c.group_aggregate(["dst_ip"], {"x": ("sum", "bytes_s2d")}).top_n("bytes_s2d", 3)
    with pytest.raises(ChainError):
        c.group_aggregate(["dst_ip"], {"x": ("p99", "bytes_s2d")})


def test_single_pass_and_cache(tcp_dir, backend):
    path, _, _ = tcp_dir
    ds = open_dataset(path, Config({"io.block_bytes": 1024}))
    size = ds.manifest["tcp"].size
    chain = ds.chain("tcp").filter(col("dst_port") == 80).project(["src_ip", "bytes_s2d"])
    a = chain.materialize()
    assert ds.stats["tcp"].bytes_read <= size
    assert ds.stats["tcp"].passes == 1
    b = chain.materialize()
    assert a is b and a == b
    assert ds.stats["tcp"].passes == 1 and chain.evaluations == 1
    # a chain extending the cached one starts from the cache
    top = chain.top_n("bytes_s2d", 5).materialize()
    assert len(top) == 5 and ds.stats["tcp"].passes == 1


def test_row_cap(tcp_dir):
    path, _, _ = tcp_dir
    ds = open_dataset(path, Config({"io.max_rows": 100}))
    with pytest.raises(RowCapExceeded):
        ds.chain("tcp").materialize()
    # aggregation state is bounded by groups, so it is not capped
    assert len(ds.chain("tcp").group_aggregate(["dst_ip"], {"n": ("count", None)}).materialize()) == 8


def test_scan_stats_plain_and_gzip(tcp_dir, backend):
    path, cols, absent = tcp_dir
    gz = path / "gz"
    gz.mkdir()
    write_columns(gz / "tcp.records.gz", "tcp", cols, absent)
    plain = scan_stats(open_dataset(path), "tcp")
    packed = scan_stats(open_dataset(gz), "tcp")
    assert plain.row_count == packed.row_count == 1000
    assert plain.bytes_read <= plain.byte_count
    assert packed.bytes_read <= packed.byte_count


def test_scan_stats_header_only(tmp_path):
    _write_tcp(tmp_path / "tcp.records", [])
    assert scan_stats(open_dataset(tmp_path), "tcp").row_count == 0


def test_derive_step(tcp_dir):
    path, cols, _ = tcp_dir
    out = (open_dataset(path).chain("tcp")
           .derive("total", lambda b: b.values("bytes_s2d") + b.values("bytes_d2s"), "i", ["bytes_s2d", "bytes_d2s"])
           .group_aggregate([], {"t": ("sum", "total")}).materialize())
    assert out["t"].values[0] == int(np.sum(cols["bytes_s2d"]) + np.sum(cols["bytes_d2s"]))


@settings(max_examples=30, deadline=None)
@given(port=st.sampled_from([22, 80, 443, 8080, 1]), lo=st.floats(0, 600), width=st.floats(0, 300),
       min_pkts=st.integers(0, 200))
def test_filter_project_matches_row_loop(tmp_path_factory, port, lo, width, min_pkts):
    path = tmp_path_factory.mktemp("f")
    cols, absent = random_tcp_columns(300, seed=5)
    write_columns(path / "tcp.records", "tcp", cols, absent)
    pred = ((col("dst_port") == port) | (col("pkts_s2d") >= min_pkts)) & (col("ts_start") >= lo) & (col("ts_start") < lo + width)
    got = open_dataset(path, Config({"io.block_bytes": 1500})).chain("tcp").filter(pred).project(["src_ip", "ts_start"]).materialize()
    expected = [
        (s, round(float(t), 6))
        for s, t, p, k in zip(cols["src_ip"], cols["ts_start"], cols["dst_port"], cols["pkts_s2d"])
        if (p == port or k >= min_pkts) and lo <= round(float(t), 6) < lo + width
    ]
    assert list(got.rows()) == expected


def test_record_batch_equality_and_concat():
    schema = [("a", "i"), ("b", "s")]
    x = RecordBatch.from_rows(schema, [(1, "x"), (None, "y")])
    y = RecordBatch.from_rows(schema, [(1, "x"), (None, "y")])
    assert x == y
    both = RecordBatch.concat([x, y])
    assert len(both) == 4 and both["a"].absent.tolist() == [False, True, False, True]
