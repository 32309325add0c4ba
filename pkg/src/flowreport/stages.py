"""Report stages: one builder per report section.

A stage reads record batches through a :class:`LaneData` shared with the
other stages of its lane, writes its figure data under its own staging
directory and returns a :class:`ReportSection`. Stages never touch each
other's outputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .burst import BURST_CSV_COLUMNS, BurstConfig, analyze_bursts, burst_rows, candidate_metrics
from .config import Config
from .rag import dns_rag, http_rag, rag_table_rows, tcp_rag
from .recordio import Dataset, OpChain, RecordBatch
from .report import ChartSpec, Figure, ReportSection, Table, Text
from .timeseries import bin_events, reconstruct_arrays, resample

STAGE_ORDER = ("mac", "ip", "udp", "tcp", "http", "dns", "icmp", "bursts", "topology")

MAX_CHART_POINTS = 2000
MAX_BOX_VALUES = 2000
QUANTILE_POINTS = 1001


class LaneData:
    """Dataset access for the stages of one lane: each file is parsed once."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._chains: dict[str, OpChain] = {}

    def has(self, protocol: str) -> bool:
        return protocol in self.dataset

    def chain(self, protocol: str) -> OpChain:
        if protocol not in self._chains:
            self._chains[protocol] = self.dataset.chain(protocol)
        return self._chains[protocol]

    def table(self, protocol: str) -> RecordBatch | None:
        return self.chain(protocol).materialize() if self.has(protocol) else None

    def rows_parsed(self) -> int:
        return sum(s.rows_parsed for s in self.dataset.stats.values())

    def parse_seconds(self) -> float:
        return sum(s.parse_seconds for s in self.dataset.stats.values())


class StageContext:
    """What a stage builder sees: lane data, config and its staging directory."""

    def __init__(self, data: LaneData, config: Mapping, staging: str | Path, stage: str):
        self.data = data
        self.config = config
        self.staging = Path(staging)
        self.stage = stage

    def has(self, protocol: str) -> bool:
        return self.data.has(protocol)

    def chain(self, protocol: str) -> OpChain:
        return self.data.chain(protocol)

    def table(self, protocol: str) -> RecordBatch | None:
        return self.data.table(protocol)

    def write_data(self, name: str, header: Sequence[str], rows) -> str:
        """Write a figure data CSV; returns its path relative to the output root."""
        rel = f"data/{self.stage}_{name}.csv"
        path = self.staging / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        return rel


@dataclass(frozen=True)
class Stage:
    name: str
    title: str
    inputs: tuple[str, ...]
    cost_factor: float
    build: Callable[[StageContext], ReportSection]

    def expected_cost(self, dataset: Dataset | None) -> float:
        """Heuristic: cost factor times the bytes of the input files present."""
        if dataset is None:
            return self.cost_factor
        size = sum(dataset.manifest[p].size for p in self.inputs if p in dataset.manifest)
        return self.cost_factor * size


# formatting helpers


def iso(t: float) -> str:
    return datetime.fromtimestamp(t, timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def human_bytes(n: float) -> str:
    for unit in ("B", "kB", "MB", "GB", "TB"):
        if abs(n) < 1000 or unit == "TB":
            return f"{n:.0f} {unit}" if unit == "B" else f"{n:.1f} {unit}"
        n /= 1000.0
    return f"{n:.1f} TB"


def _missing(section: ReportSection, protocol: str) -> ReportSection:
    return section.add(Text(f"No {protocol.upper()} records in this dataset."))


def _quantiles(values: np.ndarray) -> np.ndarray:
    """All values when few, else evenly spaced quantiles (keeps chart data small)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) <= QUANTILE_POINTS:
        return v
    return np.quantile(v, np.linspace(0.0, 1.0, QUANTILE_POINTS))


def _stride_sample(values: np.ndarray, cap: int = MAX_BOX_VALUES) -> np.ndarray:
    if len(values) <= cap:
        return values
    return np.sort(values)[np.linspace(0, len(values) - 1, cap).round().astype(np.int64)]


def _rate_chart(ctx: StageContext, name: str, ts: np.ndarray, weights, t0: float, t_end: float,
                unit: str) -> tuple[str, str]:
    """Events (or summed weights) per second, coarsened to at most MAX_CHART_POINTS bins."""
    res = float(ctx.config["series.resolution_s"])
    s = bin_events(ts, res, weights, t0, t_end)
    k = max(1, math.ceil(len(s) / MAX_CHART_POINTS))
    if k > 1:
        s = resample(s, res * k)
    per_s = s.values / s.resolution
    rows = [(t, v) for t, v in zip(s.times().tolist(), per_s.tolist())]
    return ctx.write_data(name, ("timestamp", "value"), rows), f"{unit} per second"


def _survival_figure(ctx: StageContext, name: str, title: str, values: np.ndarray, x_label: str) -> Figure:
    q = _quantiles(values)
    data = ctx.write_data(name, ("value",), ((v,) for v in q.tolist()))
    return Figure(title, ChartSpec("survival_distribution", f"{ctx.stage}_{name}", data, x_label, "P(X > x)",
                                   log_x=True))


def _pie_figure(ctx: StageContext, name: str, title: str, pairs: Sequence[tuple[str, float]]) -> Figure:
    data = ctx.write_data(name, ("label", "value"), pairs)
    return Figure(title, ChartSpec("pie", f"{ctx.stage}_{name}", data))


def _box_figure(ctx: StageContext, name: str, title: str, groups: Sequence[tuple[str, np.ndarray]],
                y_label: str) -> Figure:
    rows = [(g, v) for g, vals in groups for v in _stride_sample(vals).tolist()]
    data = ctx.write_data(name, ("group", "value"), rows)
    return Figure(title, ChartSpec("boxplot", f"{ctx.stage}_{name}", data, "", y_label))


def _top_with_other(pairs: list[tuple[str, float]], k: int = 8) -> list[tuple[str, float]]:
    pairs = sorted(pairs, key=lambda p: (-p[1], p[0]))
    head, tail = pairs[:k], pairs[k:]
    if tail:
        head.append(("other", float(sum(v for _, v in tail))))
    return head


def _rows(batch: RecordBatch, names: Sequence[str]) -> list[tuple]:
    cols = [batch.column(n).to_list() for n in names]
    return list(zip(*cols))


def _rag_table(ctx: StageContext, protocol: str, rows) -> list:
    limit = int(ctx.config["rag.rows"])
    shown = rows[:limit]
    header, body = rag_table_rows(shown)
    red = sum(r.severity.value == "red" for r in rows)
    amber = sum(r.severity.value == "amber" for r in rows)
    note = (f"{len(rows)} {protocol} servers scored: {red} red, {amber} amber. "
            f"Showing the {len(shown)} highest scores.")
    return [Text(note), Table(f"{protocol} server health", header, body, f"{ctx.stage}_rag",
                              [r.severity.value for r in shown])]


# conversation layers


def _conversation_section(ctx: StageContext, protocol: str, title: str) -> ReportSection:
    sec = ReportSection(protocol, title)
    if not ctx.has(protocol):
        return _missing(sec, protocol)
    top_n = int(ctx.config["report.top_n"])
    root = ctx.chain(protocol)
    b = root.materialize()
    if not len(b):
        return sec.add(Text(f"The {protocol.upper()} record file is empty."))
    nbytes = b.values("bytes_a2b") + b.values("bytes_b2a")
    npkts = b.values("pkts_a2b") + b.values("pkts_b2a")
    endpoints = set(b.column("endpoint_a").to_list()) | set(b.column("endpoint_b").to_list())
    sec.add(Text(
        f"{len(b)} conversations between {len(endpoints)} endpoints carried {human_bytes(float(nbytes.sum()))} "
        f"in {int(npkts.sum())} packets from {iso(float(b.values('ts_start').min()))} "
        f"to {iso(float(b.values('ts_end').max()))} UTC."
    ))

    with_totals = (
        root.derive("bytes", lambda x: x.values("bytes_a2b") + x.values("bytes_b2a"), "i", ["bytes_a2b", "bytes_b2a"])
        .derive("pkts", lambda x: x.values("pkts_a2b") + x.values("pkts_b2a"), "i", ["pkts_a2b", "pkts_b2a"])
    )
    keys = ["endpoint_a", "endpoint_b"]
    convs = with_totals.group_aggregate(keys, {"flows": ("count", None), "bytes": ("sum", "bytes"),
                                               "pkts": ("sum", "pkts")})
    top = convs.top_n("bytes", top_n).materialize()
    sec.add(Table(f"Top {top_n} conversations by bytes", ("endpoint A", "endpoint B", "flows", "bytes", "packets"),
                  _rows(top, keys + ["flows", "bytes", "pkts"]), f"{protocol}_top_conversations"))

    talkers: dict[str, float] = {}
    for side in ("endpoint_a", "endpoint_b"):
        agg = with_totals.group_aggregate([side], {"bytes": ("sum", "bytes")}).materialize()
        for addr, v in _rows(agg, [side, "bytes"]):
            talkers[addr] = talkers.get(addr, 0) + int(v)
    ranked = sorted(talkers.items(), key=lambda p: (-p[1], p[0]))[:top_n]
    sec.add(Table(f"Top {top_n} endpoints by bytes sent or received", ("endpoint", "bytes"), ranked,
                  f"{protocol}_top_endpoints"))

    if protocol == "udp":
        ports = (with_totals.group_aggregate(["port_b"], {"flows": ("count", None), "bytes": ("sum", "bytes")})
                 .top_n("flows", top_n).materialize())
        sec.add(Table(f"Top {top_n} destination ports by flows", ("port", "flows", "bytes"),
                      _rows(ports, ["port_b", "flows", "bytes"]), "udp_top_ports"))

    all_convs = convs.materialize()
    pairs = [(f"{a} - {c}", float(v)) for a, c, v in _rows(all_convs, keys + ["bytes"])]
    sec.add(_pie_figure(ctx, "share", "Traffic share of the largest conversations", _top_with_other(pairs)))
    sec.add(_survival_figure(ctx, "flow_bytes", "Flow size distribution", nbytes, "bytes per flow"))
    return sec


def build_mac(ctx: StageContext) -> ReportSection:
    return _conversation_section(ctx, "mac", "MAC conversations")


def build_ip(ctx: StageContext) -> ReportSection:
    return _conversation_section(ctx, "ip", "IP conversations")


def build_udp(ctx: StageContext) -> ReportSection:
    return _conversation_section(ctx, "udp", "UDP conversations")


# TCP


def build_tcp(ctx: StageContext) -> ReportSection:
    sec = ReportSection("tcp", "TCP connections")
    if not ctx.has("tcp"):
        return _missing(sec, "tcp")
    top_n = int(ctx.config["report.top_n"])
    root = ctx.chain("tcp")
    b = root.materialize()
    if not len(b):
        return sec.add(Text("The TCP record file is empty."))
    t0, t1 = float(b.values("ts_start").min()), float(b.values("ts_end").max())
    nbytes = b.values("bytes_s2d") + b.values("bytes_d2s")
    cet = b.column("cet_s")
    servers = set(b.column("dst_ip").to_list())
    clients = set(b.column("src_ip").to_list())
    sec.add(Text(
        f"{len(b)} TCP connections from {len(clients)} clients to {len(servers)} servers carried "
        f"{human_bytes(float(nbytes.sum()))}. {int(cet.present.sum())} connections completed a handshake "
        f"with a measured establishment time."
    ))
    sec.items += _rag_table(ctx, "TCP", tcp_rag(b, ctx.config, t0, t1))

    totals = root.derive("bytes", lambda x: x.values("bytes_s2d") + x.values("bytes_d2s"), "i",
                         ["bytes_s2d", "bytes_d2s"])
    by_server = totals.group_aggregate(["dst_ip"], {"connections": ("count", None), "bytes": ("sum", "bytes"),
                                                   "cet_mean_s": ("mean", "cet_s"), "cet_median_s": ("median", "cet_s")})
    top = by_server.top_n("connections", top_n).materialize()
    sec.add(Table(f"Top {top_n} servers by connections",
                  ("server", "connections", "bytes", "mean CET (s)", "median CET (s)"),
                  _rows(top, ["dst_ip", "connections", "bytes", "cet_mean_s", "cet_median_s"]), "tcp_top_servers"))
    ports = totals.group_aggregate(["dst_port"], {"connections": ("count", None), "bytes": ("sum", "bytes")})
    ports = ports.top_n("connections", top_n).materialize()
    sec.add(Table(f"Top {top_n} server ports", ("port", "connections", "bytes"),
                  _rows(ports, ["dst_port", "connections", "bytes"]), "tcp_top_ports"))

    data, unit = _rate_chart(ctx, "connections", b.values("ts_start"), None, t0, t1, "connections")
    sec.add(Figure("New connections over time", ChartSpec("timeseries_line", "tcp_connections", data, "", unit)))

    top5 = [s for s, _ in _rows(top, ["dst_ip", "connections"])[:5]]
    dst = np.asarray(b.column("dst_ip").to_list(), dtype=object)
    groups = [(s, cet.values[(dst == s) & cet.present] * 1000.0) for s in top5]
    groups = [(s, v) for s, v in groups if len(v)]
    sec.add(_box_figure(ctx, "cet", "Connection establishment time of the busiest servers", groups, "CET (ms)"))
    dur = b.values("ts_end") - b.values("ts_start")
    sec.add(_survival_figure(ctx, "duration", "Connection duration distribution", dur, "seconds"))
    return sec


# HTTP and DNS


def build_http(ctx: StageContext) -> ReportSection:
    sec = ReportSection("http", "HTTP transactions")
    if not ctx.has("http"):
        return _missing(sec, "http")
    top_n = int(ctx.config["report.top_n"])
    root = ctx.chain("http")
    b = root.materialize()
    if not len(b):
        return sec.add(Text("The HTTP record file is empty."))
    rt = b.column("response_time_s")
    sec.add(Text(
        f"{len(b)} HTTP transactions to {len(set(b.column('server_ip').to_list()))} servers; "
        f"median response time {float(np.median(rt.values[rt.present])) if rt.present.any() else 0.0:.3f} s."
    ))
    sec.items += _rag_table(ctx, "HTTP", http_rag(b, ctx.config))

    codes = root.group_aggregate(["response_code"], {"transactions": ("count", None)}).materialize()
    code_rows = sorted(_rows(codes, ["response_code", "transactions"]))
    sec.add(Table("Response codes", ("code", "transactions"), code_rows, "http_codes"))
    methods = root.group_aggregate(["method"], {"transactions": ("count", None)}).materialize()
    sec.add(Table("Methods", ("method", "transactions"),
                  sorted(_rows(methods, ["method", "transactions"]), key=lambda r: (-r[1], r[0])), "http_methods"))
    urls = root.group_aggregate(["url"], {"requests": ("count", None), "mean_rt_s": ("mean", "response_time_s")})
    top_urls = sorted(_rows(urls.materialize(), ["url", "requests", "mean_rt_s"]), key=lambda r: (-r[1], r[0]))
    sec.add(Table(f"Top {top_n} URLs", ("url", "requests", "mean response time (s)"), top_urls[:top_n],
                  "http_top_urls"))

    classes: dict[str, float] = {}
    for code, n in code_rows:
        label = "no response" if code == 0 else f"{code // 100}xx"
        classes[label] = classes.get(label, 0.0) + n
    sec.add(_pie_figure(ctx, "classes", "Response classes", sorted(classes.items())))

    keys = [f"{ip}:{port}" for ip, port in _rows(b, ["server_ip", "server_port"])]
    keys = np.asarray(keys, dtype=object)
    uniq, counts = np.unique(keys, return_counts=True)
    busiest = [str(k) for k, _ in sorted(zip(uniq.tolist(), counts.tolist()), key=lambda p: (-p[1], p[0]))[:5]]
    groups = [(k, rt.values[(keys == k) & rt.present]) for k in busiest]
    sec.add(_box_figure(ctx, "rt", "Response time of the busiest servers", [g for g in groups if len(g[1])],
                        "response time (s)"))
    return sec


def build_dns(ctx: StageContext) -> ReportSection:
    sec = ReportSection("dns", "DNS transactions")
    if not ctx.has("dns"):
        return _missing(sec, "dns")
    top_n = int(ctx.config["report.top_n"])
    root = ctx.chain("dns")
    b = root.materialize()
    if not len(b):
        return sec.add(Text("The DNS record file is empty."))
    rcode = b.values("rcode")
    sec.add(Text(
        f"{len(b)} DNS transactions to {len(set(b.column('server_ip').to_list()))} servers; "
        f"{int((rcode == -1).sum())} queries got no response."
    ))
    sec.items += _rag_table(ctx, "DNS", dns_rag(b, ctx.config))

    rc = root.group_aggregate(["rcode"], {"transactions": ("count", None)}).materialize()
    sec.add(Table("Response codes", ("rcode", "transactions"), sorted(_rows(rc, ["rcode", "transactions"])),
                  "dns_rcodes"))
    names = root.group_aggregate(["query_name"], {"queries": ("count", None)}).materialize()
    top_names = sorted(_rows(names, ["query_name", "queries"]), key=lambda r: (-r[1], r[0]))[:top_n]
    sec.add(Table(f"Top {top_n} query names", ("name", "queries"), top_names, "dns_top_names"))
    qt = root.group_aggregate(["qtype"], {"queries": ("count", None)}).materialize()
    sec.add(_pie_figure(ctx, "qtypes", "Query types", sorted((k, float(v)) for k, v in _rows(qt, ["qtype", "queries"]))))

    rt = b.column("response_time_ms")
    server = np.asarray(b.column("server_ip").to_list(), dtype=object)
    groups = [(s, rt.values[(server == s) & rt.present]) for s in sorted(set(server.tolist()))]
    sec.add(_box_figure(ctx, "rt", "Response time per server", [g for g in groups if len(g[1])][:10],
                        "response time (ms)"))
    return sec


# ICMP


def build_icmp(ctx: StageContext) -> ReportSection:
    sec = ReportSection("icmp", "ICMP messages")
    if not ctx.has("icmp"):
        return _missing(sec, "icmp")
    top_n = int(ctx.config["report.top_n"])
    root = ctx.chain("icmp")
    b = root.materialize()
    if not len(b):
        return sec.add(Text("The ICMP record file is empty."))
    ts = b.values("ts")
    sec.add(Text(f"{int(b.values('count').sum())} ICMP messages in {len(b)} records."))
    tc = root.group_aggregate(["icmp_type", "icmp_code"], {"messages": ("sum", "count")}).materialize()
    tc_rows = sorted(_rows(tc, ["icmp_type", "icmp_code", "messages"]))
    sec.add(Table("Messages by type and code", ("type", "code", "messages"), tc_rows, "icmp_types"))
    src = root.group_aggregate(["src_ip"], {"messages": ("sum", "count")}).materialize()
    top_src = sorted(_rows(src, ["src_ip", "messages"]), key=lambda r: (-r[1], r[0]))[:top_n]
    sec.add(Table(f"Top {top_n} sources", ("source", "messages"), top_src, "icmp_top_sources"))
    by_type: dict[str, float] = {}
    for t, _, n in tc_rows:
        by_type[f"type {t}"] = by_type.get(f"type {t}", 0.0) + n
    sec.add(_pie_figure(ctx, "types", "Message types", sorted(by_type.items())))
    data, unit = _rate_chart(ctx, "rate", ts, b.values("count"), float(ts.min()), float(ts.max()), "messages")
    sec.add(Figure("ICMP messages over time", ChartSpec("timeseries_line", "icmp_rate", data, "", unit)))
    return sec


# bursts


def build_bursts(ctx: StageContext) -> ReportSection:
    sec = ReportSection("bursts", "Traffic bursts")
    if not ctx.has("ip"):
        return _missing(sec, "ip")
    cfg = ctx.config
    ip = ctx.table("ip")
    if not len(ip):
        return sec.add(Text("The IP record file is empty."))
    res = float(cfg["series.resolution_s"])
    starts, ends = ip.values("ts_start"), ip.values("ts_end")
    t0 = math.floor(float(starts.min()) / res) * res
    t_end = float(max(ends.max(), starts.max()))
    series = reconstruct_arrays(starts, ends, ip.values("bytes_a2b") + ip.values("bytes_b2a"), res, t0, t_end)
    t_end = series.end
    tables = {p: ctx.table(p) for p in ("tcp", "udp", "http", "dns", "icmp") if ctx.has(p)}
    metrics = candidate_metrics(tables, t0, t_end, res)
    bcfg = BurstConfig.from_config(cfg)
    bursts = analyze_bursts(series, bcfg, metrics, ctx.chain("tcp") if ctx.has("tcp") else None,
                            int(cfg["series.variability_window"]), cfg["burst.variability_reduce"],
                            int(cfg["burst.top_clients"]))
    accepted = [b for b in bursts if b.accepted]
    sec.add(Text(
        f"Rate series at {res:g} s resolution, peak {series.values.max() / 1e6:.1f} Mbit/s. "
        f"{len(bursts)} candidate intervals at or above {bcfg.threshold / 1e6:g} Mbit/s, "
        f"{len(accepted)} accepted as bursts."
    ))
    sec.add(Table("Burst candidates", BURST_CSV_COLUMNS, burst_rows(bursts), "bursts"))

    summary = []
    for i, b in enumerate(accepted, 1):
        causes = ", ".join(f"{rc.metric} ({rc.score:.2f})" for rc in b.root_causes[:3])
        clients = ", ".join(f"{c} ({n})" for c, n in b.top_clients[:3])
        summary.append((i, iso(b.start), b.duration, b.peak_rate / 1e6, b.mean_rate / 1e6, b.extended,
                        causes, clients))
    sec.add(Table("Accepted bursts", ("#", "start (UTC)", "duration (s)", "peak (Mbit/s)", "mean (Mbit/s)",
                                      "extended", "root-cause candidates", "top clients"), summary,
                  "bursts_accepted"))
    ranking = [(i, r, rc.metric, rc.score) for i, b in enumerate(accepted, 1)
               for r, rc in enumerate(b.root_causes, 1)]
    sec.add(Table("Root-cause ranking by rolling variability", ("burst", "rank", "metric", "score"), ranking,
                  "bursts_root_causes"))
    clients = [(i, c, n) for i, b in enumerate(accepted, 1) for c, n in b.top_clients]
    sec.add(Table("Clients with most connections during each burst", ("burst", "client", "connections"), clients,
                  "bursts_clients"))

    k = max(1, math.ceil(len(series) / MAX_CHART_POINTS))
    shown = resample(series, res * k) if k > 1 else series
    data = ctx.write_data("bps", ("timestamp", "value"), zip(shown.times().tolist(), (shown.values / 1e6).tolist()))
    sec.add(Figure("Traffic rate with accepted bursts shaded",
                   ChartSpec("timeseries_line", "bursts_rate", data, "", "Mbit/s",
                             highlights=tuple((b.start, b.end) for b in accepted))))
    return sec


# topology


def build_topology(ctx: StageContext) -> ReportSection:
    sec = ReportSection("topology", "Topology")
    if not ctx.has("ip"):
        return _missing(sec, "ip")
    n = 2 * int(ctx.config["report.top_n"])
    root = ctx.chain("ip")
    if not len(root.materialize()):
        return sec.add(Text("The IP record file is empty."))

    def lo(x):
        a, b = x.values("endpoint_a"), x.values("endpoint_b")
        return np.where(a <= b, a, b)

    def hi(x):
        a, b = x.values("endpoint_a"), x.values("endpoint_b")
        return np.where(a <= b, b, a)

    pairs = (
        root.derive("node_a", lo, "s", ["endpoint_a", "endpoint_b"])
        .derive("node_b", hi, "s", ["endpoint_a", "endpoint_b"])
        .derive("bytes", lambda x: x.values("bytes_a2b") + x.values("bytes_b2a"), "i", ["bytes_a2b", "bytes_b2a"])
        .group_aggregate(["node_a", "node_b"], {"flows": ("count", None), "bytes": ("sum", "bytes")})
        .top_n("bytes", n)
        .materialize()
    )
    rows = _rows(pairs, ["node_a", "node_b", "flows", "bytes"])
    sec.add(Text(f"Node-link view of the {len(rows)} largest host pairs by bytes, both directions combined. "
                 f"Edge width scales with volume."))
    sec.add(Table("Largest host pairs", ("host", "host", "flows", "bytes"), rows, "topology_pairs"))
    data = ctx.write_data("edges", ("source", "target", "weight"), ((a, b, v / 1e6) for a, b, _, v in rows))
    sec.add(Figure("Host pairs by volume", ChartSpec("topology_graph", "topology_graph", data)))
    return sec


STAGES: dict[str, Stage] = {s.name: s for s in (
    Stage("mac", "MAC conversations", ("mac",), 1.0, build_mac),
    Stage("ip", "IP conversations", ("ip",), 1.0, build_ip),
    Stage("udp", "UDP conversations", ("udp",), 1.0, build_udp),
    Stage("tcp", "TCP connections", ("tcp",), 3.0, build_tcp),
    Stage("http", "HTTP transactions", ("http",), 1.5, build_http),
    Stage("dns", "DNS transactions", ("dns",), 1.5, build_dns),
    Stage("icmp", "ICMP messages", ("icmp",), 1.0, build_icmp),
    Stage("bursts", "Traffic bursts", ("ip", "tcp", "udp", "http", "dns", "icmp"), 2.0, build_bursts),
    Stage("topology", "Topology", ("ip",), 0.5, build_topology),
)}


def run_stage(stage: Stage, data: LaneData, config: Mapping | None, staging: str | Path) -> ReportSection:
    """Build one stage in-process (no isolation); used by tests and the scheduler."""
    ctx = StageContext(data, config if config is not None else Config(), staging, stage.name)
    return stage.build(ctx)
