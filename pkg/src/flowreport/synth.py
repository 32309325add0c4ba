"""Seeded synthetic flow-record datasets with planted anomalies.

Arrivals are Poisson per protocol, flow sizes and durations log-normal. The
planted anomalies are listed in ``truth.json`` next to the record files so
analysis output can be checked against them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .recordio import write_columns
from .records import SCHEMAS

DEFAULT_T0 = 1_700_000_000.0
DEFAULT_RATES = {"tcp": 50.0, "udp": 20.0, "http": 20.0, "dns": 30.0, "icmp": 10.0}

# metrics a planted burst can be driven by; names match the candidate
# metric series built for root-cause ranking
BURST_CAUSES = ("tcp_connections", "tcp_mb_per_connection", "udp_flows")
TCP_PCT_KPIS = ("dupack_s2d", "dupack_d2s", "retx_s2d", "retx_d2s", "zwin_d2s")
SICK_TCP_KPIS = TCP_PCT_KPIS + ("cet", "rtt", "downtime")
ANOMALY_KINDS = ("burst", "sick_tcp_server", "slow_http_server", "dns_error_server")

TCP_SERVERS = [f"10.0.0.{i}" for i in range(1, 21)]
HTTP_SERVERS = [f"10.0.1.{i}" for i in range(1, 6)]
HTTP_PORTS = [80, 8080]
DNS_SERVERS = [f"10.0.2.{i}" for i in range(1, 4)]
CLIENTS = [f"10.1.{i // 250}.{i % 250 + 1}" for i in range(200)]

# mean payload of a regular TCP flow: lognormal(mu, 1) with median 20 kB
_TCP_BYTES_MU = math.log(20_000)
_TCP_BYTES_MEAN = 20_000 * math.exp(0.5)


class SpecError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    seed: int = 0
    duration: float = 600.0
    t0: float = DEFAULT_T0
    rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    anomalies: list[dict[str, Any]] = field(default_factory=list)

    def validate(self) -> "ScenarioSpec":
        if not self.duration > 0:
            raise SpecError("duration must be > 0")
        for proto, rate in self.rates.items():
            if proto not in DEFAULT_RATES:
                raise SpecError(f"no generator for protocol {proto!r}")
            if rate < 0:
                raise SpecError(f"rate for {proto} must be >= 0")
        for i, a in enumerate(self.anomalies):
            kind = a.get("kind")
            if kind not in ANOMALY_KINDS:
                raise SpecError(f"anomaly {i}: unknown kind {kind!r}")
            if kind == "burst":
                s, e = a.get("start"), a.get("end")
                if s is None or e is None or not 0 <= s < e <= self.duration:
                    raise SpecError(f"anomaly {i}: burst interval must lie within [0, duration]")
                if a.get("cause") not in BURST_CAUSES:
                    raise SpecError(f"anomaly {i}: cause must be one of {BURST_CAUSES}")
                if not a.get("magnitude_bps", 0) > 0:
                    raise SpecError(f"anomaly {i}: magnitude_bps must be > 0")
            elif kind == "sick_tcp_server":
                if a.get("server") not in TCP_SERVERS:
                    raise SpecError(f"anomaly {i}: server must be one of the TCP servers")
                kpi = a.get("kpi")
                if kpi not in SICK_TCP_KPIS:
                    raise SpecError(f"anomaly {i}: kpi must be one of {SICK_TCP_KPIS}")
                level = a.get("level", 0)
                if kpi in TCP_PCT_KPIS and not 0 < level <= 100:
                    raise SpecError(f"anomaly {i}: percentage level must be in (0, 100]")
                if kpi in ("cet", "rtt") and not level > 0:
                    raise SpecError(f"anomaly {i}: {kpi} level must be > 0 seconds")
            elif kind == "slow_http_server":
                if a.get("server") not in HTTP_SERVERS or a.get("port") not in HTTP_PORTS:
                    raise SpecError(f"anomaly {i}: unknown HTTP server:port")
                if not a.get("median_rt", 0) > 0:
                    raise SpecError(f"anomaly {i}: median_rt must be > 0")
            elif kind == "dns_error_server":
                if a.get("server") not in DNS_SERVERS:
                    raise SpecError(f"anomaly {i}: unknown DNS server")
                if not 0 < a.get("error_pct", 0) <= 100:
                    raise SpecError(f"anomaly {i}: error_pct must be in (0, 100]")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScenarioSpec":
        unknown = set(d) - {"seed", "duration", "t0", "rates", "anomalies"}
        if unknown:
            raise SpecError(f"unknown spec field(s) {sorted(unknown)}")
        rates = dict(DEFAULT_RATES)
        rates.update(d.get("rates", {}))
        return cls(int(d.get("seed", 0)), float(d.get("duration", 600.0)), float(d.get("t0", DEFAULT_T0)),
                   rates, [dict(a) for a in d.get("anomalies", [])]).validate()

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def standard_scenario(seed: int = 7, duration: float = 900.0, scale: float = 1.0) -> ScenarioSpec:
    """The fixture used by the acceptance suite: one burst and one case per RAG pathology."""
    rates = {k: v * scale for k, v in DEFAULT_RATES.items()}
    return ScenarioSpec(seed, duration, DEFAULT_T0, rates, [
        {"kind": "burst", "start": 300.0, "end": 360.0, "magnitude_bps": 200e6, "cause": "tcp_connections"},
        {"kind": "sick_tcp_server", "server": "10.0.0.3", "kpi": "retx_s2d", "level": 8.0},
        {"kind": "sick_tcp_server", "server": "10.0.0.7", "kpi": "rtt", "level": 1.5},
        {"kind": "sick_tcp_server", "server": "10.0.0.11", "kpi": "downtime"},
        {"kind": "slow_http_server", "server": "10.0.1.2", "port": 8080, "median_rt": 0.3},
        {"kind": "dns_error_server", "server": "10.0.2.2", "error_pct": 12.0},
    ]).validate()


def _arrivals(rng, rate, t_lo, t_hi):
    n = rng.poisson(rate * (t_hi - t_lo))
    return np.sort(rng.uniform(t_lo, t_hi, n))


def _pick(rng, pool, n):
    return np.asarray(pool, dtype=object)[rng.integers(0, len(pool), n)]


def _tcp_flows(rng, ts, servers=None, clients=None, durations=None, nbytes=None):
    n = len(ts)
    dur = rng.lognormal(0.0, 1.0, n) if durations is None else durations
    size = np.maximum(rng.lognormal(_TCP_BYTES_MU, 1.0, n), 64).round() if nbytes is None else nbytes
    bytes_d2s = np.maximum((size * 0.8).round(), 1).astype(np.int64)
    bytes_s2d = np.maximum(size.astype(np.int64) - bytes_d2s, 1)
    pkts_d2s = np.maximum(bytes_d2s // 1200, 1) + 2
    pkts_s2d = np.maximum(bytes_s2d // 1200, 1) + 2
    cet = rng.lognormal(math.log(0.01), 0.5, n)
    return {
        "ts_start": ts,
        "ts_end": ts + dur,
        "src_ip": _pick(rng, CLIENTS, n) if clients is None else clients,
        "dst_ip": _pick(rng, TCP_SERVERS, n) if servers is None else servers,
        "src_port": rng.integers(1024, 65536, n),
        "dst_port": rng.choice([80, 443, 22, 3306], n),
        "pkts_s2d": pkts_s2d,
        "pkts_d2s": pkts_d2s,
        "bytes_s2d": bytes_s2d,
        "bytes_d2s": bytes_d2s,
        "data_pkts_s2d": pkts_s2d - 2,
        "data_pkts_d2s": pkts_d2s - 2,
        "syn_count": np.ones(n, np.int64),
        "synack_count": np.ones(n, np.int64),
        "ignored_syns": (rng.random(n) < 0.01).astype(np.int64),
        "retx_s2d": rng.binomial(pkts_s2d, 0.005),
        "retx_d2s": rng.binomial(pkts_d2s, 0.005),
        "dupack_s2d": rng.binomial(pkts_s2d, 0.005),
        "dupack_d2s": rng.binomial(pkts_d2s, 0.005),
        "zwin_s2d": rng.binomial(pkts_s2d, 0.002),
        "zwin_d2s": rng.binomial(pkts_d2s, 0.002),
        "cet_s": cet,
        "rtt_s": cet * rng.uniform(0.3, 0.7, n),
    }


def _udp_flows(rng, ts, nbytes=None):
    n = len(ts)
    size = np.maximum(rng.lognormal(math.log(2_000), 1.0, n), 64).round() if nbytes is None else nbytes
    b_ab = np.maximum((size * 0.5).round(), 1).astype(np.int64)
    b_ba = np.maximum(size.astype(np.int64) - b_ab, 1)
    return {
        "ts_start": ts,
        "ts_end": ts + rng.lognormal(-1.0, 1.0, n),
        "endpoint_a": _pick(rng, CLIENTS, n),
        "endpoint_b": _pick(rng, TCP_SERVERS + DNS_SERVERS, n),
        "port_a": rng.integers(1024, 65536, n),
        "port_b": rng.choice([53, 123, 161, 5060], n),
        "pkts_a2b": np.maximum(b_ab // 1000, 1),
        "pkts_b2a": np.maximum(b_ba // 1000, 1),
        "bytes_a2b": b_ab,
        "bytes_b2a": b_ba,
    }


def _concat(a: dict, b: dict) -> dict:
    return {k: np.concatenate([np.asarray(a[k]), np.asarray(b[k])]) for k in a}


def _sort_by(cols: dict, key: str) -> dict:
    order = np.argsort(cols[key], kind="stable")
    return {k: np.asarray(v)[order] for k, v in cols.items()}


def _mac(ip: str) -> str:
    return "02:00:" + ":".join(f"{int(o):02x}" for o in ip.split("."))


def _plant_burst(rng, a, t0, tcp, udp):
    s, e = t0 + a["start"], t0 + a["end"]
    span = e - s
    total_bytes = a["magnitude_bps"] * span / 8.0
    cause = a["cause"]
    if cause == "tcp_connections":
        # many regular-sized short connections
        rate = a["magnitude_bps"] / 8.0 / _TCP_BYTES_MEAN
        ts = np.sort(rng.uniform(s, e - 1.0, max(1, rng.poisson(rate * (span - 1.0)))))
        extra = _tcp_flows(rng, ts, durations=np.full(len(ts), 1.0))
        sizes = extra["bytes_s2d"] + extra["bytes_d2s"]
        # rescale so the planted volume is exact
        factor = total_bytes / sizes.sum()
        extra["bytes_d2s"] = np.maximum((extra["bytes_d2s"] * factor).round(), 1).astype(np.int64)
        extra["bytes_s2d"] = np.maximum((extra["bytes_s2d"] * factor).round(), 1).astype(np.int64)
        return _concat(tcp, extra), udp
    if cause == "tcp_mb_per_connection":
        # a handful of elephant flows spanning the burst
        k = 4
        ts = np.full(k, s)
        extra = _tcp_flows(rng, ts, durations=np.full(k, span), nbytes=np.full(k, round(total_bytes / k)))
        return _concat(tcp, extra), udp
    # udp_flows: many small datagram exchanges
    rate = a["magnitude_bps"] / 8.0 / 2_000.0
    ts = np.sort(rng.uniform(s, e - 1.0, max(1, rng.poisson(rate * (span - 1.0)))))
    extra = _udp_flows(rng, ts, nbytes=np.full(len(ts), 2_000.0))
    extra["ts_end"] = ts + 1.0
    factor = total_bytes / (extra["bytes_a2b"] + extra["bytes_b2a"]).sum()
    extra["bytes_a2b"] = np.maximum((extra["bytes_a2b"] * factor).round(), 1).astype(np.int64)
    extra["bytes_b2a"] = np.maximum((extra["bytes_b2a"] * factor).round(), 1).astype(np.int64)
    return tcp, _concat(udp, extra)


def _sicken_tcp(rng, a, tcp, t0, duration):
    sel = tcp["dst_ip"] == a["server"]
    kpi = a["kpi"]
    if kpi in TCP_PCT_KPIS:
        pkts = tcp["pkts_s2d" if kpi.endswith("s2d") else "pkts_d2s"][sel]
        # ceil keeps every connection at or above the planted level
        tcp[kpi][sel] = np.minimum(np.ceil(a["level"] * pkts / 100.0 - 1e-9), pkts).astype(np.int64)
    elif kpi in ("cet", "rtt"):
        col = f"{kpi}_s"
        tcp[col][sel] = a["level"] * rng.uniform(1.0, 1.2, int(sel.sum()))
    else:
        # downtime: SYNs that are never answered and carry no data
        n = int(sel.sum())
        for name in ("pkts_d2s", "bytes_d2s", "data_pkts_s2d", "data_pkts_d2s", "synack_count",
                     "retx_d2s", "dupack_d2s", "zwin_d2s"):
            tcp[name][sel] = 0
        tcp["pkts_s2d"][sel] = rng.integers(1, 4, n)
        tcp["syn_count"][sel] = tcp["pkts_s2d"][sel]
        tcp["bytes_s2d"][sel] = 60 * tcp["pkts_s2d"][sel]
        for name in ("retx_s2d", "dupack_s2d", "zwin_s2d"):
            tcp[name][sel] = 0
        tcp["ts_end"][sel] = tcp["ts_start"][sel] + 3.0
    return tcp


def simulate(spec: ScenarioSpec) -> dict[str, dict[str, np.ndarray]]:
    """Generate every protocol's columns in memory (no files)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t0, t1 = spec.t0, spec.t0 + spec.duration
    r = spec.rates
    tcp = _tcp_flows(rng, _arrivals(rng, r.get("tcp", 0.0), t0, t1))
    udp = _udp_flows(rng, _arrivals(rng, r.get("udp", 0.0), t0, t1))

    ts = _arrivals(rng, r.get("http", 0.0), t0, t1)
    n = len(ts)
    codes = np.full(n, 200, np.int64)
    u = rng.random(n)
    codes[u < 0.02] = 404
    codes[u < 0.005] = 500
    http = {
        "ts": ts,
        "client_ip": _pick(rng, CLIENTS, n),
        "server_ip": _pick(rng, HTTP_SERVERS, n),
        "server_port": rng.choice(HTTP_PORTS, n),
        "method": rng.choice(np.array(["GET", "POST", "PUT"], dtype=object), n, p=[0.8, 0.15, 0.05]),
        "url": np.array([f"/r/{i}" for i in rng.integers(0, 500, n)], dtype=object),
        "response_code": codes,
        "response_time_s": rng.lognormal(math.log(0.02), 0.5, n),
    }

    ts = _arrivals(rng, r.get("dns", 0.0), t0, t1)
    n = len(ts)
    rcode = np.zeros(n, np.int64)
    u = rng.random(n)
    rcode[u < 0.01] = 3
    rcode[u < 0.005] = -1
    dns = {
        "ts": ts,
        "client_ip": _pick(rng, CLIENTS, n),
        "server_ip": _pick(rng, DNS_SERVERS, n),
        "query_name": np.array([f"host{i}.example.org" for i in rng.integers(0, 300, n)], dtype=object),
        "qtype": rng.choice(np.array(["A", "AAAA", "MX", "PTR"], dtype=object), n, p=[0.6, 0.25, 0.05, 0.1]),
        "rcode": rcode,
        "response_time_ms": rng.lognormal(math.log(5.0), 0.5, n),
    }
    dns_absent = {"response_time_ms": rcode == -1}

    ts = _arrivals(rng, r.get("icmp", 0.0), t0, t1)
    n = len(ts)
    icmp = {
        "ts": ts,
        "src_ip": _pick(rng, CLIENTS + TCP_SERVERS, n),
        "dst_ip": _pick(rng, CLIENTS + TCP_SERVERS, n),
        "icmp_type": rng.choice([0, 3, 8, 11], n, p=[0.45, 0.05, 0.45, 0.05]),
        "icmp_code": np.zeros(n, np.int64),
        "count": rng.integers(1, 4, n),
    }

    for a in spec.anomalies:
        kind = a["kind"]
        if kind == "burst":
            tcp, udp = _plant_burst(rng, a, t0, tcp, udp)
        elif kind == "sick_tcp_server":
            tcp = _sicken_tcp(rng, a, tcp, t0, spec.duration)
        elif kind == "slow_http_server":
            sel = (http["server_ip"] == a["server"]) & (http["server_port"] == a["port"])
            if sel.any():
                rt = rng.lognormal(0.0, 0.3, int(sel.sum()))
                http["response_time_s"][sel] = rt * (a["median_rt"] / np.median(rt))
        elif kind == "dns_error_server":
            idx = np.flatnonzero(dns["server_ip"] == a["server"])
            k = int(math.ceil(a["error_pct"] * len(idx) / 100.0 - 1e-9))
            chosen = np.sort(rng.choice(idx, k, replace=False)) if k else idx[:0]
            dns["rcode"][idx] = 0
            dns_absent["response_time_ms"][idx] = False
            dns["rcode"][chosen] = 2

    tcp = _sort_by(tcp, "ts_start")
    udp = _sort_by(udp, "ts_start")

    ip = {
        "ts_start": np.concatenate([tcp["ts_start"], udp["ts_start"]]),
        "ts_end": np.concatenate([tcp["ts_end"], udp["ts_end"]]),
        "endpoint_a": np.concatenate([tcp["src_ip"], udp["endpoint_a"]]),
        "endpoint_b": np.concatenate([tcp["dst_ip"], udp["endpoint_b"]]),
        "pkts_a2b": np.concatenate([tcp["pkts_s2d"], udp["pkts_a2b"]]),
        "pkts_b2a": np.concatenate([tcp["pkts_d2s"], udp["pkts_b2a"]]),
        "bytes_a2b": np.concatenate([tcp["bytes_s2d"], udp["bytes_a2b"]]),
        "bytes_b2a": np.concatenate([tcp["bytes_d2s"], udp["bytes_b2a"]]),
    }
    ip = _sort_by(ip, "ts_start")
    macs = {addr: _mac(addr) for addr in set(ip["endpoint_a"]) | set(ip["endpoint_b"])}
    mac = dict(ip)
    mac["endpoint_a"] = np.array([macs[x] for x in ip["endpoint_a"]], dtype=object)
    mac["endpoint_b"] = np.array([macs[x] for x in ip["endpoint_b"]], dtype=object)

    return {
        "mac": mac, "ip": ip, "udp": udp, "tcp": tcp, "http": http, "icmp": icmp,
        "dns": dns, "_absent_dns": dns_absent,
    }


def truth_manifest(spec: ScenarioSpec) -> dict:
    planted = []
    for a in spec.anomalies:
        entry = dict(a)
        if a["kind"] == "burst":
            entry["abs_start"] = spec.t0 + a["start"]
            entry["abs_end"] = spec.t0 + a["end"]
        elif a["kind"] == "sick_tcp_server":
            entry.update(protocol="TCP", entity=a["server"], trigger=a["kpi"])
        elif a["kind"] == "slow_http_server":
            entry.update(protocol="HTTP", entity=f"{a['server']}:{a['port']}", trigger="median_rt")
        else:
            entry.update(protocol="DNS", entity=a["server"], trigger="errors")
        planted.append(entry)
    return {"spec": json.loads(spec.to_json()), "t0": spec.t0, "t_end": spec.t0 + spec.duration,
            "anomalies": planted}


def generate(spec: ScenarioSpec, out_dir: str | Path, compress: bool = False) -> dict:
    """Write one record file per protocol plus ``truth.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate(spec)
    absent = {"dns": data.pop("_absent_dns")}
    suffix = ".records.gz" if compress else ".records"
    files = {}
    for proto in SCHEMAS:
        path = out / f"{proto}{suffix}"
        write_columns(path, proto, data[proto], absent.get(proto), compress=compress)
        files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    truth = truth_manifest(spec)
    truth["files"] = files
    (out / "truth.json").write_text(json.dumps(truth, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return truth
