"""Red-Amber-Green server health scoring for TCP, HTTP and DNS servers.

Scoring happens in two steps: KPI extraction from a batch of records, then
:func:`score_kpis`, which turns a KPI mapping into triggers and a score. The
second step only looks at the KPI values, so any row can be re-scored from
``row.kpis`` alone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .config import Config
from .recordio import RecordBatch


class Severity(str, Enum):
    RED = "red"
    AMBER = "amber"
    GREEN = "green"


# triggers with a fixed score; any of them makes a row red
FIXED_TRIGGERS = frozenset({"downtime", "cet", "rtt", "median_rt", "mean_rt"})
TCP_PCT_KPIS = {
    # kpi: (count column, packets column)
    "dupack_s2d": ("dupack_s2d", "pkts_s2d"),
    "dupack_d2s": ("dupack_d2s", "pkts_d2s"),
    "retx_s2d": ("retx_s2d", "pkts_s2d"),
    "retx_d2s": ("retx_d2s", "pkts_d2s"),
    "zwin_d2s": ("zwin_d2s", "pkts_d2s"),
}


@dataclass(frozen=True)
class KpiBucketSeries:
    """Per-bucket KPIs of one server over the observation span.

    ``cet`` and ``rtt`` hold the bucket mean (NaN where the bucket has no
    measurement); ``data_active`` tells whether any flow carrying data
    packets overlapped the bucket.
    """

    entity: str
    bucket_s: float
    t0: float
    cet: np.ndarray = field(repr=False)
    rtt: np.ndarray = field(repr=False)
    data_active: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.bucket_s > 0:
            raise ValueError("bucket width must be > 0")
        if not (len(self.cet) == len(self.rtt) == len(self.data_active)):
            raise ValueError("bucket arrays differ in length")

    def __len__(self) -> int:
        return len(self.data_active)

    @property
    def end(self) -> float:
        return self.t0 + len(self) * self.bucket_s

    @classmethod
    def from_tcp(cls, entity: str, batch: RecordBatch, bucket_s: float = 300.0,
                 t0: float | None = None, t_end: float | None = None) -> "KpiBucketSeries":
        start = batch.column("ts_start").values.astype(np.float64)
        end = batch.column("ts_end").values.astype(np.float64)
        if t0 is None:
            t0 = float(start.min()) if len(start) else 0.0
        last = max(float(max(end.max(), start.max())) + 1e-9 if len(end) else t0, t_end if t_end is not None else t0)
        n = max(1, int(math.ceil((last - t0) / bucket_s)))
        first = np.clip(np.floor((start - t0) / bucket_s).astype(np.int64), 0, n - 1)

        def bucket_mean(name):
            c = batch.column(name)
            keep = c.present
            sums = np.bincount(first[keep], weights=c.values[keep].astype(np.float64), minlength=n)
            counts = np.bincount(first[keep], minlength=n)
            out = np.full(n, np.nan)
            np.divide(sums, counts, out=out, where=counts > 0)
            return out

        data = (batch.column("data_pkts_s2d").values > 0) | (batch.column("data_pkts_d2s").values > 0)
        lo = first[data]
        hi = np.clip(np.ceil((end[data] - t0) / bucket_s).astype(np.int64), lo + 1, n)
        diff = np.zeros(n + 1, dtype=np.int64)
        np.add.at(diff, lo, 1)
        np.add.at(diff, hi, -1)
        active = np.cumsum(diff[:n]) > 0
        return cls(entity, float(bucket_s), float(t0), bucket_mean("cet_s"), bucket_mean("rtt_s"), active)


def sustained(values: np.ndarray, trigger: float, nbuckets: int) -> bool:
    """True when ``nbuckets`` consecutive buckets are all at or above ``trigger``."""
    run = 0
    for v in values:
        run = run + 1 if v >= trigger else 0  # NaN compares False and breaks the run
        if run >= nbuckets:
            return True
    return False


def spiked(values: np.ndarray, factor: float) -> bool:
    """True when a bucket is at least ``factor`` times the mean of non-empty buckets."""
    v = values[~np.isnan(values)]
    if not len(v):
        return False
    m = float(v.mean())
    return m > 0 and bool((v >= factor * m).any())


@dataclass(frozen=True)
class RagRow:
    entity: str
    protocol: str
    kpis: Mapping[str, object]
    fired_triggers: frozenset
    contributions: Mapping[str, float]
    score: float
    severity: Severity


def _severity(fired) -> Severity:
    if fired & FIXED_TRIGGERS:
        return Severity.RED
    if fired:
        return Severity.AMBER
    return Severity.GREEN


def score_kpis(protocol: str, kpis: Mapping[str, object], config: Mapping | None = None):
    """Apply the trigger table to raw KPI values.

    Returns ``(score, fired_triggers, contributions)``.
    """
    cfg = config if config is not None else Config()
    fired: set[str] = set()
    contrib: dict[str, float] = {}

    def add(name, value, trigger=True):
        contrib[name] = contrib.get(name, 0.0) + float(value)
        if trigger:
            fired.add(name)

    p = protocol.lower()
    if p == "tcp":
        for k in TCP_PCT_KPIS:
            pct = kpis[f"{k}_pct"]
            if kpis[f"{k}_connections"] and pct >= cfg[f"rag.tcp.{k}.trigger_pct"]:
                add(k, cfg[f"rag.tcp.{k}.score_per_unit"] * pct)
        if kpis["unanswered_syns"] and kpis["inactive_frac"] >= cfg["rag.tcp.downtime.inactive_frac"]:
            add("downtime", cfg["rag.tcp.downtime.score"])
        for k in ("cet", "rtt"):
            if kpis[f"{k}_sustained"] or kpis[f"{k}_spike"]:
                add(k, cfg[f"rag.tcp.{k}.score"])
        add("ignored_syns", cfg["rag.tcp.ignored_syns.score_per_unit"] * kpis["ignored_syns"], False)
        if kpis["synack_total"] == 0 and kpis["syn_records"] > cfg["rag.tcp.connections.sentinel_min_syn_records"]:
            add("connections", cfg["rag.tcp.connections.sentinel_score"], False)
        else:
            add("connections", cfg["rag.tcp.connections.score_per_unit"] * kpis["connections"], False)
        add("bytes", cfg["rag.tcp.bytes.score_per_unit"] * kpis["bytes"] / cfg["rag.tcp.bytes.unit"], False)
    elif p == "http":
        tx = kpis["transactions"]
        for k in ("server_errors", "client_errors"):
            pct = kpis[f"{k}_pct"]
            if tx and pct >= cfg[f"rag.http.{k}.trigger_pct"]:
                add(k, cfg[f"rag.http.{k}.weight"] * pct * tx / 100.0)
        for k in ("median_rt", "mean_rt"):
            v = kpis[f"{k}_s"]
            if v is not None and v >= cfg[f"rag.http.{k}.trigger_s"]:
                add(k, cfg[f"rag.http.{k}.score"])
        add("acc_rt", cfg["rag.http.acc_rt.score_per_unit"] * kpis["acc_rt_pct"], False)
        add("transactions", cfg["rag.http.transactions.score_per_unit"] * tx, False)
    elif p == "dns":
        tx = kpis["transactions"]
        if tx and kpis["errors_pct"] >= cfg["rag.dns.errors.trigger_pct"]:
            add("errors", cfg["rag.dns.errors.score_per_unit"] * kpis["errors_pct"])
        for k in ("median_rt", "mean_rt"):
            v = kpis[f"{k}_ms"]
            if v is not None and v >= cfg[f"rag.dns.{k}.trigger_ms"]:
                add(k, cfg[f"rag.dns.{k}.score"])
        add("acc_time", cfg["rag.dns.acc_time.score_per_unit"] * kpis["acc_time_pct"], False)
        add("transactions", cfg["rag.dns.transactions.score_per_unit"] * tx, False)
    else:
        raise ValueError(f"no RAG rules for protocol {protocol!r}")
    return float(sum(contrib.values())), frozenset(fired), contrib


def make_row(entity: str, protocol: str, kpis: Mapping[str, object], config: Mapping | None = None) -> RagRow:
    score, fired, contrib = score_kpis(protocol, kpis, config)
    return RagRow(entity, protocol.upper(), dict(kpis), fired, contrib, score, _severity(fired))


def _pct_per_connection(counts: np.ndarray, pkts: np.ndarray) -> tuple[float, int]:
    keep = pkts > 0
    n = int(keep.sum())
    if not n:
        return 0.0, 0
    return float((100.0 * counts[keep] / pkts[keep]).mean()), n


def tcp_kpis(batch: RecordBatch, buckets: KpiBucketSeries | None, config: Mapping | None = None) -> dict:
    cfg = config if config is not None else Config()
    kpis: dict[str, object] = {}
    v = {name: batch.column(name).values for name in batch.names}
    for k, (count_col, pkts_col) in TCP_PCT_KPIS.items():
        kpis[f"{k}_pct"], kpis[f"{k}_connections"] = _pct_per_connection(
            v[count_col].astype(np.float64), v[pkts_col].astype(np.float64))
    kpis["unanswered_syns"] = int(((v["syn_count"] > 0) & (v["pkts_d2s"] == 0)).sum())
    if buckets is not None and len(buckets):
        kpis["inactive_frac"] = float(1.0 - buckets.data_active.mean())
    else:
        kpis["inactive_frac"] = 0.0
    for k in ("cet", "rtt"):
        series = getattr(buckets, k) if buckets is not None else np.zeros(0)
        trigger = cfg[f"rag.tcp.{k}.trigger_s"]
        width = buckets.bucket_s if buckets is not None else cfg["rag.bucket_s"]
        need = max(1, int(math.ceil(cfg[f"rag.tcp.{k}.sustain_s"] / width - 1e-9)))
        kpis[f"{k}_sustained"] = sustained(series, trigger, need)
        kpis[f"{k}_spike"] = spiked(series, cfg[f"rag.tcp.{k}.spike_factor"])
        present = batch.column(f"{k}_s")
        vals = present.values[present.present]
        kpis[f"{k}_mean_s"] = float(vals.mean()) if len(vals) else None
        finite = series[~np.isnan(series)] if len(series) else series
        kpis[f"{k}_max_bucket_s"] = float(finite.max()) if len(finite) else None
    kpis["ignored_syns"] = int(v["ignored_syns"].sum())
    kpis["connections"] = len(batch)
    kpis["syn_records"] = int((v["syn_count"] > 0).sum())
    kpis["synack_total"] = int(v["synack_count"].sum())
    kpis["bytes"] = int(v["bytes_s2d"].sum() + v["bytes_d2s"].sum())
    return kpis


def score_tcp_server(server_ip: str, tcp_batch: RecordBatch, buckets: KpiBucketSeries | None = None,
                     config: Mapping | None = None) -> RagRow:
    """Score one TCP server; ``tcp_batch`` holds the flows whose destination is it."""
    cfg = config if config is not None else Config()
    if buckets is None and len(tcp_batch):
        buckets = KpiBucketSeries.from_tcp(server_ip, tcp_batch, cfg["rag.bucket_s"])
    return make_row(server_ip, "tcp", tcp_kpis(tcp_batch, buckets, cfg), cfg)


def _median_mean(values: np.ndarray):
    if not len(values):
        return None, None
    return float(np.median(values)), float(values.mean())


def http_kpis(batch: RecordBatch, total_response_time: float | None = None) -> dict:
    codes = batch.column("response_code").values
    rt = batch.column("response_time_s")
    times = rt.values[rt.present].astype(np.float64)
    tx = len(batch)
    median, mean = _median_mean(times)
    acc = float(times.sum())
    total = acc if total_response_time is None else total_response_time
    return {
        "transactions": tx,
        "server_errors_pct": 100.0 * int(((codes >= 500) & (codes <= 599)).sum()) / tx if tx else 0.0,
        "client_errors_pct": 100.0 * int(((codes >= 400) & (codes <= 499)).sum()) / tx if tx else 0.0,
        "median_rt_s": median,
        "mean_rt_s": mean,
        "acc_rt_s": acc,
        "acc_rt_pct": 100.0 * acc / total if total > 0 else 0.0,
    }


def score_http_server(server_ip: str, port: int, http_batch: RecordBatch,
                      total_response_time: float | None = None, config: Mapping | None = None) -> RagRow:
    """Score one HTTP server:port.

    ``total_response_time`` is the response time summed over all HTTP
    records; it defaults to this batch's own total (a 100% share).
    """
    return make_row(f"{server_ip}:{port}", "http", http_kpis(http_batch, total_response_time), config)


def dns_kpis(batch: RecordBatch, total_response_time: float | None = None, count_no_response: bool = False) -> dict:
    rcode = batch.column("rcode").values
    rt = batch.column("response_time_ms")
    times = rt.values[rt.present].astype(np.float64)
    tx = len(batch)
    err = rcode != 0 if count_no_response else (rcode != 0) & (rcode != -1)
    median, mean = _median_mean(times)
    acc = float(times.sum())
    total = acc if total_response_time is None else total_response_time
    return {
        "transactions": tx,
        "errors_pct": 100.0 * int(err.sum()) / tx if tx else 0.0,
        "no_response": int((rcode == -1).sum()),
        "median_rt_ms": median,
        "mean_rt_ms": mean,
        "acc_time_ms": acc,
        "acc_time_pct": 100.0 * acc / total if total > 0 else 0.0,
    }


def score_dns_server(server_ip: str, dns_batch: RecordBatch, total_response_time: float | None = None,
                     config: Mapping | None = None) -> RagRow:
    cfg = config if config is not None else Config()
    kpis = dns_kpis(dns_batch, total_response_time, cfg["rag.dns.errors.count_no_response"])
    return make_row(server_ip, "dns", kpis, cfg)


def build_rag_table(rows: Sequence[RagRow]) -> list[RagRow]:
    """Rows sorted by score, highest first; ties by entity key."""
    protocols = {r.protocol for r in rows}
    if len(protocols) > 1:
        raise ValueError(f"rows mix protocols {sorted(protocols)}")
    return sorted(rows, key=lambda r: (-r.score, r.entity))


def split_by(batch: RecordBatch, keys: Sequence[str]) -> Iterator[tuple[tuple, RecordBatch]]:
    """Sub-batches per distinct key tuple, in key order."""
    if not len(batch):
        return
    cols = [batch.column(k).to_list() for k in keys]
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(zip(*cols)):
        groups.setdefault(key, []).append(i)
    for key in sorted(groups, key=lambda k: tuple((v is None, "" if v is None else v) for v in k)):
        yield key, batch.take(np.asarray(groups[key], dtype=np.int64))


def tcp_rag(batch: RecordBatch, config: Mapping | None = None, t0: float | None = None,
            t_end: float | None = None) -> list[RagRow]:
    """Score every TCP server (``dst_ip``) in ``batch`` over a shared bucket grid."""
    cfg = config if config is not None else Config()
    if not len(batch):
        return []
    if t0 is None:
        t0 = float(batch.column("ts_start").values.min())
    if t_end is None:
        t_end = float(batch.column("ts_end").values.max())
    rows = []
    for (server,), sub in split_by(batch, ["dst_ip"]):
        buckets = KpiBucketSeries.from_tcp(server, sub, cfg["rag.bucket_s"], t0, t_end)
        rows.append(score_tcp_server(server, sub, buckets, cfg))
    return build_rag_table(rows)


def http_rag(batch: RecordBatch, config: Mapping | None = None) -> list[RagRow]:
    if not len(batch):
        return []
    rt = batch.column("response_time_s")
    total = float(rt.values[rt.present].sum())
    rows = [score_http_server(ip, port, sub, total, config)
            for (ip, port), sub in split_by(batch, ["server_ip", "server_port"])]
    return build_rag_table(rows)


def dns_rag(batch: RecordBatch, config: Mapping | None = None) -> list[RagRow]:
    if not len(batch):
        return []
    rt = batch.column("response_time_ms")
    total = float(rt.values[rt.present].sum())
    rows = [score_dns_server(ip, sub, total, config) for (ip,), sub in split_by(batch, ["server_ip"])]
    return build_rag_table(rows)


# columns shown in exported tables, per protocol
DISPLAY_KPIS = {
    "TCP": ["connections", "bytes", "retx_s2d_pct", "retx_d2s_pct", "dupack_s2d_pct", "dupack_d2s_pct",
            "zwin_d2s_pct", "cet_mean_s", "rtt_mean_s", "ignored_syns", "unanswered_syns"],
    "HTTP": ["transactions", "server_errors_pct", "client_errors_pct", "median_rt_s", "mean_rt_s", "acc_rt_pct"],
    "DNS": ["transactions", "errors_pct", "median_rt_ms", "mean_rt_ms", "acc_time_pct"],
}


def rag_table_rows(rows: Sequence[RagRow]) -> tuple[list[str], list[list]]:
    if not rows:
        return ["entity", "score", "severity", "triggers"], []
    kpi_names = DISPLAY_KPIS[rows[0].protocol]
    header = ["entity", "score", "severity", "triggers"] + kpi_names
    body = []
    for r in rows:
        body.append([r.entity, r.score, r.severity.value, " ".join(sorted(r.fired_triggers))]
                    + [r.kpis.get(k) for k in kpi_names])
    return header, body


def write_rag_csv(path: str | Path, rows: Sequence[RagRow]) -> Path:
    path = Path(path)
    header, body = rag_table_rows(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in body:
            w.writerow(["" if x is None else repr(x) if isinstance(x, float) else x for x in r])
    return path
