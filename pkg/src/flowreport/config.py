"""Flat ``dotted.key = value`` configuration.

Every tunable of the analysis lives here, including the full RAG constants
table. ``default.conf`` in the package is generated from ``DEFAULTS`` and a
test keeps the two in sync.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterator, Mapping


class ConfigError(ValueError):
    pass


# (key, default, constraint, comment); constraint is one of
# "pos" (> 0), "nonneg" (>= 0), "any", or a tuple of allowed string values
_P, _N, _A = "pos", "nonneg", "any"

DEFAULTS: list[tuple[str, Any, Any, str]] = [
    # io
    ("io.skip_bad_rows", False, _A, "count and drop malformed rows instead of failing"),
    ("io.max_rows", 50_000_000, _P, "row cap for any single materialization"),
    ("io.block_bytes", 1 << 20, _P, "read block size"),
    # series
    ("series.resolution_s", 1.0, _P, "time-series bin width"),
    ("series.variability_window", 301, _P, "rolling variability window in bins (odd)"),
    # bursts
    ("burst.threshold_bps", 100e6, _P, "rate at or above which a bin is part of a burst"),
    ("burst.min_duration_s", 5.0, _P, "shorter merged intervals are rejected"),
    ("burst.min_avg_rate_bps", 80e6, _P, "merged intervals with a lower mean rate are rejected"),
    ("burst.max_gap_s", 5.0, _P, "runs separated by a shorter sub-threshold gap are merged"),
    ("burst.variability_reduce", "max", ("max", "mean"), "how window scores inside a burst are reduced"),
    ("burst.top_clients", 10, _P, "clients listed per burst"),
    # rag: common
    ("rag.bucket_s", 300.0, _P, "bucket width for time-dependent KPIs"),
    ("rag.rows", 20, _P, "rows shown per RAG table"),
    # rag: tcp percentage KPIs
    ("rag.tcp.dupack_s2d.trigger_pct", 5.0, _N, "duplicate ACK src->dst, % per connection"),
    ("rag.tcp.dupack_s2d.score_per_unit", 2.0, _N, ""),
    ("rag.tcp.dupack_d2s.trigger_pct", 5.0, _N, "duplicate ACK dst->src, % per connection"),
    ("rag.tcp.dupack_d2s.score_per_unit", 2.0, _N, ""),
    ("rag.tcp.retx_s2d.trigger_pct", 5.0, _N, "retransmissions src->dst, % per connection"),
    ("rag.tcp.retx_s2d.score_per_unit", 2.0, _N, ""),
    ("rag.tcp.retx_d2s.trigger_pct", 5.0, _N, "retransmissions dst->src, % per connection"),
    ("rag.tcp.retx_d2s.score_per_unit", 2.0, _N, ""),
    ("rag.tcp.zwin_d2s.trigger_pct", 5.0, _N, "zero window dst->src, % per connection"),
    ("rag.tcp.zwin_d2s.score_per_unit", 2.0, _N, ""),
    # rag: tcp fixed-value triggers
    ("rag.tcp.downtime.inactive_frac", 0.9, _P, "fraction of buckets without data activity"),
    ("rag.tcp.downtime.score", 25.0, _N, ""),
    ("rag.tcp.cet.trigger_s", 0.1, _P, "connection establishment time"),
    ("rag.tcp.cet.sustain_s", 300.0, _P, "time the CET must stay at or above the trigger"),
    ("rag.tcp.cet.spike_factor", 10.0, _P, "bucket spike relative to the mean bucket value"),
    ("rag.tcp.cet.score", 50.0, _N, ""),
    ("rag.tcp.rtt.trigger_s", 1.0, _P, "round-trip time"),
    ("rag.tcp.rtt.sustain_s", 300.0, _P, ""),
    ("rag.tcp.rtt.spike_factor", 10.0, _P, ""),
    ("rag.tcp.rtt.score", 50.0, _N, ""),
    # rag: tcp importance
    ("rag.tcp.ignored_syns.score_per_unit", 0.1, _N, "ignored / denied SYNs"),
    ("rag.tcp.connections.score_per_unit", 0.01, _N, ""),
    ("rag.tcp.connections.sentinel_min_syn_records", 1000, _N, "no SYN-ACK at all but more SYN records than this"),
    ("rag.tcp.connections.sentinel_score", 10.0, _N, "connection term used in the sentinel case"),
    ("rag.tcp.bytes.score_per_unit", 0.1, _N, "per bytes.unit transmitted"),
    ("rag.tcp.bytes.unit", 1e6, _P, "bytes per scoring unit (MB)"),
    # rag: http
    ("rag.http.server_errors.trigger_pct", 5.0, _N, "5xx share of transactions"),
    ("rag.http.server_errors.weight", 3.0, _N, "score = weight * pct * transactions / 100"),
    ("rag.http.client_errors.trigger_pct", 20.0, _N, "4xx share of transactions"),
    ("rag.http.client_errors.weight", 1.0, _N, ""),
    ("rag.http.median_rt.trigger_s", 0.1, _P, ""),
    ("rag.http.median_rt.score", 50.0, _N, ""),
    ("rag.http.mean_rt.trigger_s", 0.5, _P, ""),
    ("rag.http.mean_rt.score", 50.0, _N, ""),
    ("rag.http.acc_rt.score_per_unit", 2.0, _N, "per percentage point of all HTTP response time"),
    ("rag.http.transactions.score_per_unit", 1.0, _N, ""),
    # rag: dns
    ("rag.dns.errors.trigger_pct", 5.0, _N, "rcode != 0 share of transactions"),
    ("rag.dns.errors.score_per_unit", 2.0, _N, ""),
    ("rag.dns.errors.count_no_response", False, _A, "treat rcode -1 (no response) as an error"),
    ("rag.dns.median_rt.trigger_ms", 100.0, _P, ""),
    ("rag.dns.median_rt.score", 50.0, _N, ""),
    ("rag.dns.mean_rt.trigger_ms", 500.0, _P, ""),
    ("rag.dns.mean_rt.score", 50.0, _N, ""),
    ("rag.dns.acc_time.score_per_unit", 1.0, _N, "per percentage point of all DNS response time"),
    ("rag.dns.transactions.score_per_unit", 1.0, _N, ""),
    # report / scheduling
    ("report.top_n", 10, _P, "rows in top-N tables"),
    ("report.format", "markdown", ("markdown", "latex", "text"), ""),
    ("report.gnuplot", True, _A, "also write charts/*.gp scripts"),
    ("schedule.policy", "sequential", ("sequential", "parallel", "smart"), ""),
    ("schedule.heavy_stages", ["tcp", "bursts"], _A, "stages isolated in the first lane by the smart policy"),
    ("schedule.sample_hz", 20.0, _P, "memory sampling rate"),
]

_SPEC = {k: (d, c) for k, d, c, _ in DEFAULTS}

DEFAULT_CONF = Path(__file__).with_name("default.conf")


def _coerce(key: str, raw: Any) -> Any:
    default, constraint = _SPEC[key]
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                value = raw
            elif str(raw).strip().lower() in ("true", "1", "yes"):
                value = True
            elif str(raw).strip().lower() in ("false", "0", "no"):
                value = False
            else:
                raise ValueError(raw)
        elif isinstance(default, int):
            value = int(raw)
        elif isinstance(default, float):
            value = float(raw)
        elif isinstance(default, list):
            value = [s.strip() for s in raw.split(",") if s.strip()] if isinstance(raw, str) else list(raw)
        else:
            value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if constraint == _P and not value > 0:
        raise ConfigError(f"{key}: must be > 0, got {value!r}")
    if constraint == _N and not value >= 0:
        raise ConfigError(f"{key}: must be >= 0, got {value!r}")
    if isinstance(constraint, tuple) and value not in constraint:
        raise ConfigError(f"{key}: must be one of {', '.join(constraint)}, got {value!r}")
    return value


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(value)
    return str(value)


class Config(Mapping[str, Any]):
    """Immutable mapping of every known key to its effective value."""

    def __init__(self, overrides: Mapping[str, Any] | None = None):
        values = {k: d for k, d, _, _ in DEFAULTS}
        for key, raw in (overrides or {}).items():
            if key not in _SPEC:
                raise ConfigError(f"unknown key: {key}")
            values[key] = _coerce(key, raw)
        if values["series.variability_window"] % 2 == 0:
            raise ConfigError("series.variability_window: must be odd")
        self._values = values

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Config) and self._values == other._values

    def __repr__(self) -> str:
        changed = {k: v for k, v in self._values.items() if v != _SPEC[k][0]}
        return f"Config({changed!r})"

    def replace(self, **overrides: Any) -> "Config":
        """Return a copy with ``overrides`` applied; dots in keys become ``__``."""
        merged = dict(self._values)
        merged.update({k.replace("__", "."): v for k, v in overrides.items()})
        return Config(merged)

    def section(self, prefix: str) -> dict[str, Any]:
        """Values under ``prefix.`` with the prefix stripped."""
        p = prefix.rstrip(".") + "."
        return {k[len(p):]: v for k, v in self._values.items() if k.startswith(p)}

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "Config":
        overrides: dict[str, str] = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in overrides:
                raise ConfigError(f"{source}:{n}: duplicate key {key}")
            overrides[key] = value
        return cls(overrides)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))

    def dump(self) -> str:
        out = ["# flowreport configuration", ""]
        group = None
        for key, _, _, comment in DEFAULTS:
            head = key.rsplit(".", 1)[0] if key.startswith("rag.") else key.split(".")[0]
            if head != group and group is not None:
                out.append("")
            group = head
            if comment:
                out.append(f"# {comment}")
            out.append(f"{key} = {_format(self._values[key])}")
        return "\n".join(out) + "\n"
