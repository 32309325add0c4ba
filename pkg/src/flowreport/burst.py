"""Threshold-based burst detection and root-cause ranking on a bits/s series."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .recordio import OpChain, col
from .timeseries import TimeSeries, bin_events, rolling_variability


class NoCoverageWarning(UserWarning):
    """No candidate metric has bins inside the burst interval."""


class BurstStatus(str, Enum):
    ACCEPTED = "accepted"
    REJECTED_DURATION = "rejected_duration"
    REJECTED_AVG_RATE = "rejected_avg_rate"


@dataclass(frozen=True)
class BurstConfig:
    threshold: float = 100e6
    min_duration: float = 5.0
    min_avg_rate: float = 80e6
    max_gap: float = 5.0

    def __post_init__(self):
        for name in ("threshold", "min_duration", "min_avg_rate", "max_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def from_config(cls, cfg: Mapping) -> "BurstConfig":
        return cls(
            threshold=cfg["burst.threshold_bps"],
            min_duration=cfg["burst.min_duration_s"],
            min_avg_rate=cfg["burst.min_avg_rate_bps"],
            max_gap=cfg["burst.max_gap_s"],
        )


@dataclass(frozen=True)
class RootCause:
    metric: str
    score: float


@dataclass(frozen=True)
class Burst:
    start: float
    end: float
    peak_rate: float
    mean_rate: float
    status: BurstStatus
    extended_from: tuple[tuple[float, float], ...] = ()
    root_causes: tuple[RootCause, ...] = ()
    top_clients: tuple[tuple[str, int], ...] = ()

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def accepted(self) -> bool:
        return self.status is BurstStatus.ACCEPTED

    @property
    def extended(self) -> bool:
        return len(self.extended_from) > 1


def _runs(hot: np.ndarray) -> list[tuple[int, int]]:
    if not hot.any():
        return []
    edges = np.diff(np.concatenate(([0], hot.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def detect_bursts(series: TimeSeries, config: BurstConfig) -> list[Burst]:
    """Find bursts of every status, sorted by start time.

    Maximal runs of bins at or above the threshold are merged when the
    sub-threshold gap between them is shorter than ``max_gap`` seconds.
    A merged interval is rejected for duration first, then for a mean rate
    (gap bins included) below ``min_avg_rate``.
    """
    v = series.values
    res = series.resolution
    runs = _runs(v >= config.threshold)
    if not runs:
        return []
    merged: list[list[tuple[int, int]]] = [[runs[0]]]
    for a, b in runs[1:]:
        if (a - merged[-1][-1][1]) * res < config.max_gap:
            merged[-1].append((a, b))
        else:
            merged.append([(a, b)])
    t0 = series.t0
    out = []
    for group in merged:
        a, b = group[0][0], group[-1][1]
        seg = v[a:b]
        duration = (b - a) * res
        mean = float(seg.mean())
        if duration < config.min_duration:
            status = BurstStatus.REJECTED_DURATION
        elif mean < config.min_avg_rate:
            status = BurstStatus.REJECTED_AVG_RATE
        else:
            status = BurstStatus.ACCEPTED
        out.append(Burst(
            start=t0 + a * res,
            end=t0 + b * res,
            peak_rate=float(seg.max()),
            mean_rate=mean,
            status=status,
            extended_from=tuple((t0 + x * res, t0 + y * res) for x, y in group),
        ))
    return out


def rank_root_causes(burst: Burst, candidate_metrics: Mapping[str, TimeSeries], window_bins: int = 301,
                     reduce: str = "max", variability: dict[str, TimeSeries] | None = None) -> list[RootCause]:
    """Rank metrics by their rolling variability inside the burst, highest first.

    ``variability`` may carry precomputed :func:`rolling_variability` results
    keyed by metric name; missing entries are computed and stored in it.
    """
    if reduce not in ("max", "mean"):
        raise ValueError("reduce must be 'max' or 'mean'")
    ranking = []
    for name, series in candidate_metrics.items():
        sl = series.bins_overlapping(burst.start, burst.end)
        if sl.stop <= sl.start:
            continue
        if variability is not None and name in variability:
            cv = variability[name]
        else:
            cv = rolling_variability(series, window_bins)
            if variability is not None:
                variability[name] = cv
        window = cv.values[sl]
        score = float(window.max() if reduce == "max" else window.mean())
        ranking.append(RootCause(name, score))
    if not ranking:
        warnings.warn(f"no candidate metric covers [{burst.start}, {burst.end})", NoCoverageWarning, stacklevel=2)
        return []
    ranking.sort(key=lambda rc: (-rc.score, rc.metric))
    return ranking


CANDIDATE_METRICS = (
    "tcp_connections", "tcp_mb_per_connection", "udp_flows", "http_transactions", "http_response_time",
    "dns_queries", "dns_response_time", "icmp_messages",
)


def _values(table, name: str) -> np.ndarray:
    """Column ``name`` as an array; absent numeric cells become NaN."""
    if hasattr(table, "column"):
        c = table.column(name)
        if c.kind in "if":
            v = c.values.astype(np.float64)
            return np.where(c.absent, np.nan, v) if c.absent.any() else v
        return c.values
    return np.asarray(table[name])


def _mean_series(ts, vals, resolution, t0, t_end) -> TimeSeries:
    ok = ~np.isnan(vals)
    sums = bin_events(ts[ok], resolution, vals[ok], t0, t_end)
    counts = bin_events(ts[ok], resolution, None, t0, t_end)
    n = max(len(sums), len(counts))
    s = np.pad(sums.values, (0, n - len(sums)))
    c = np.pad(counts.values, (0, n - len(counts)))
    return TimeSeries(t0, resolution, np.divide(s, c, out=np.zeros(n), where=c > 0))


def candidate_metrics(tables: Mapping[str, object], t0: float, t_end: float,
                      resolution: float = 1.0) -> dict[str, TimeSeries]:
    """Per-bin metric series that may explain a burst.

    ``tables`` maps protocol to a RecordBatch or a mapping of column arrays;
    missing protocols contribute no metric. Mean-valued metrics are 0 in
    bins without events.
    """
    out: dict[str, TimeSeries] = {}

    def events(ts, weights=None):
        return bin_events(ts, resolution, weights, t0, t_end)

    tcp = tables.get("tcp")
    if tcp is not None:
        ts = _values(tcp, "ts_start")
        out["tcp_connections"] = events(ts)
        mb = (_values(tcp, "bytes_s2d") + _values(tcp, "bytes_d2s")) / 1e6
        out["tcp_mb_per_connection"] = _mean_series(ts, mb, resolution, t0, t_end)
    udp = tables.get("udp")
    if udp is not None:
        out["udp_flows"] = events(_values(udp, "ts_start"))
    http = tables.get("http")
    if http is not None:
        ts = _values(http, "ts")
        out["http_transactions"] = events(ts)
        out["http_response_time"] = _mean_series(ts, _values(http, "response_time_s"), resolution, t0, t_end)
    dns = tables.get("dns")
    if dns is not None:
        ts = _values(dns, "ts")
        out["dns_queries"] = events(ts)
        out["dns_response_time"] = _mean_series(ts, _values(dns, "response_time_ms"), resolution, t0, t_end)
    icmp = tables.get("icmp")
    if icmp is not None:
        out["icmp_messages"] = events(_values(icmp, "ts"), _values(icmp, "count"))
    n = int(np.ceil((t_end - t0) / resolution - 1e-9))
    # clip to the common span so every metric covers the same bins
    return {k: TimeSeries(t0, resolution, v.values[:n], k) for k, v in out.items()}


def overlapping(start: float, end: float):
    """Predicate for flows that overlap ``[start, end)``."""
    return (col("ts_start") < end) & ((col("ts_end") > start) | (col("ts_start") >= start))


def attribute_clients(burst: Burst, tcp_chain: OpChain, top_n: int = 10) -> list[tuple[str, int]]:
    """Clients (``src_ip``) with the most TCP connections overlapping the burst."""
    counts = (
        tcp_chain.filter(overlapping(burst.start, burst.end))
        .group_aggregate(["src_ip"], {"connections": ("count", None)})
        .materialize()
    )
    pairs = list(zip(counts.column("src_ip").to_list(), counts.column("connections").values.tolist()))
    pairs.sort(key=lambda p: (-p[1], "" if p[0] is None else p[0]))
    return [(c, int(n)) for c, n in pairs[:top_n]]


def analyze_bursts(series: TimeSeries, config: BurstConfig, candidate_metrics: Mapping[str, TimeSeries],
                   tcp_chain: OpChain | None = None, window_bins: int = 301, reduce: str = "max",
                   top_clients: int = 10) -> list[Burst]:
    """Detect bursts, then rank causes and attribute clients for the accepted ones."""
    cache: dict[str, TimeSeries] = {}
    out = []
    for b in detect_bursts(series, config):
        if b.accepted:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NoCoverageWarning)
                causes = rank_root_causes(b, candidate_metrics, window_bins, reduce, cache)
            clients = attribute_clients(b, tcp_chain, top_clients) if tcp_chain is not None else []
            b = replace(b, root_causes=tuple(causes), top_clients=tuple(clients))
        out.append(b)
    return out


BURST_CSV_COLUMNS = ["start", "end", "duration", "peak", "mean", "status", "top_cause", "top_client"]


def burst_rows(bursts: Sequence[Burst]) -> list[list]:
    rows = []
    for b in bursts:
        rows.append([
            b.start, b.end, b.duration, b.peak_rate, b.mean_rate, b.status.value,
            b.root_causes[0].metric if b.root_causes else "",
            b.top_clients[0][0] if b.top_clients else "",
        ])
    return rows


def write_bursts_csv(path: str | Path, bursts: Sequence[Burst]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BURST_CSV_COLUMNS)
        for r in burst_rows(bursts):
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return path
