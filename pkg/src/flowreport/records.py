"""Enriched flow-record types, their column schemas and invariant checks."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Mapping, Optional, Union

PROTOCOLS = ("mac", "ip", "udp", "tcp", "http", "dns", "icmp")


class Layer(str, Enum):
    MAC = "MAC"
    IP = "IP"
    UDP = "UDP"


# kind codes shared with the parse kernels: i=int64, f=float64, s=utf-8 text
_CONV = [
    ("ts_start", "f"), ("ts_end", "f"), ("endpoint_a", "s"), ("endpoint_b", "s"),
    ("pkts_a2b", "i"), ("pkts_b2a", "i"), ("bytes_a2b", "i"), ("bytes_b2a", "i"),
]

SCHEMAS: dict[str, list[tuple[str, str]]] = {
    "mac": list(_CONV),
    "ip": list(_CONV),
    "udp": _CONV[:4] + [("port_a", "i"), ("port_b", "i")] + _CONV[4:],
    "tcp": [
        ("ts_start", "f"), ("ts_end", "f"), ("src_ip", "s"), ("dst_ip", "s"),
        ("src_port", "i"), ("dst_port", "i"),
        ("pkts_s2d", "i"), ("pkts_d2s", "i"), ("bytes_s2d", "i"), ("bytes_d2s", "i"),
        ("data_pkts_s2d", "i"), ("data_pkts_d2s", "i"),
        ("syn_count", "i"), ("synack_count", "i"), ("ignored_syns", "i"),
        ("retx_s2d", "i"), ("retx_d2s", "i"), ("dupack_s2d", "i"), ("dupack_d2s", "i"),
        ("zwin_s2d", "i"), ("zwin_d2s", "i"),
        ("cet_s", "f"), ("rtt_s", "f"),
    ],
    "http": [
        ("ts", "f"), ("client_ip", "s"), ("server_ip", "s"), ("server_port", "i"),
        ("method", "s"), ("url", "s"), ("response_code", "i"), ("response_time_s", "f"),
    ],
    "dns": [
        ("ts", "f"), ("client_ip", "s"), ("server_ip", "s"), ("query_name", "s"),
        ("qtype", "s"), ("rcode", "i"), ("response_time_ms", "f"),
    ],
    "icmp": [
        ("ts", "f"), ("src_ip", "s"), ("dst_ip", "s"),
        ("icmp_type", "i"), ("icmp_code", "i"), ("count", "i"),
    ],
}

# columns whose values may legitimately be absent
OPTIONAL_COLUMNS = frozenset({"cet_s", "rtt_s", "response_time_s", "response_time_ms"})

# written with 6 decimals; everything else float-typed is written with repr()
SECONDS_COLUMNS = frozenset({"ts_start", "ts_end", "ts", "cet_s", "rtt_s", "response_time_s"})


@dataclass(frozen=True)
class ConversationRecord:
    layer: Layer
    ts_start: float
    ts_end: float
    endpoint_a: str
    endpoint_b: str
    pkts_a2b: int
    pkts_b2a: int
    bytes_a2b: int
    bytes_b2a: int
    port_a: Optional[int] = None
    port_b: Optional[int] = None
    extra: Mapping[str, str] = field(default_factory=dict, compare=True)


@dataclass(frozen=True)
class TcpRecord:
    ts_start: float
    ts_end: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    pkts_s2d: int
    pkts_d2s: int
    bytes_s2d: int
    bytes_d2s: int
    data_pkts_s2d: int = 0
    data_pkts_d2s: int = 0
    syn_count: int = 0
    synack_count: int = 0
    ignored_syns: int = 0
    retx_s2d: int = 0
    retx_d2s: int = 0
    dupack_s2d: int = 0
    dupack_d2s: int = 0
    zwin_s2d: int = 0
    zwin_d2s: int = 0
    cet_s: Optional[float] = None
    rtt_s: Optional[float] = None
    extra: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class HttpRecord:
    ts: float
    client_ip: str
    server_ip: str
    server_port: int
    method: str
    url: str
    response_code: int
    response_time_s: Optional[float] = None
    extra: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class DnsRecord:
    ts: float
    client_ip: str
    server_ip: str
    query_name: str
    qtype: str
    rcode: int
    response_time_ms: Optional[float] = None
    extra: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class IcmpRecord:
    ts: float
    src_ip: str
    dst_ip: str
    icmp_type: int
    icmp_code: int
    count: int = 1
    extra: Mapping[str, str] = field(default_factory=dict)


FlowRecord = Union[ConversationRecord, TcpRecord, HttpRecord, DnsRecord, IcmpRecord]

RECORD_TYPES = {
    "mac": ConversationRecord, "ip": ConversationRecord, "udp": ConversationRecord,
    "tcp": TcpRecord, "http": HttpRecord, "dns": DnsRecord, "icmp": IcmpRecord,
}


def protocol_of(record: FlowRecord) -> str:
    if isinstance(record, ConversationRecord):
        return Layer(record.layer).value.lower()
    for proto, cls in RECORD_TYPES.items():
        if proto not in ("mac", "ip", "udp") and isinstance(record, cls):
            return proto
    raise TypeError(f"not a flow record: {type(record).__name__}")


def _count_fields(record) -> list[str]:
    return [
        f.name for f in fields(record)
        if f.name.startswith(("pkts_", "bytes_", "data_pkts_", "retx_", "dupack_", "zwin_"))
        or f.name in ("syn_count", "synack_count", "ignored_syns")
    ]


def _check_port(record, name: str, problems: list[str]) -> None:
    v = getattr(record, name)
    if v is None:
        problems.append(f"{name} missing")
    elif not 0 <= v <= 65535:
        problems.append(f"{name} out of range")


def validate(record: FlowRecord) -> list[str]:
    """Return every invariant the record violates; an empty list means valid."""
    problems: list[str] = []
    for f in fields(record):
        if f.name != "extra" and f.name not in OPTIONAL_COLUMNS and f.name not in ("port_a", "port_b"):
            if getattr(record, f.name) is None:
                problems.append(f"{f.name} missing")
    if problems:
        return problems

    if hasattr(record, "ts_start") and record.ts_start > record.ts_end:
        problems.append("ts_start > ts_end")
    for name in _count_fields(record):
        if getattr(record, name) < 0:
            problems.append(f"{name} negative")

    if isinstance(record, ConversationRecord):
        if Layer(record.layer) is Layer.UDP:
            _check_port(record, "port_a", problems)
            _check_port(record, "port_b", problems)
        else:
            for name in ("port_a", "port_b"):
                if getattr(record, name) is not None:
                    problems.append(f"{name} not allowed on {Layer(record.layer).value} records")
    elif isinstance(record, TcpRecord):
        _check_port(record, "src_port", problems)
        _check_port(record, "dst_port", problems)
        for d in ("s2d", "d2s"):
            if getattr(record, f"retx_{d}") > getattr(record, f"pkts_{d}"):
                problems.append(f"retx_{d} > pkts_{d}")
        for name in ("cet_s", "rtt_s"):
            v = getattr(record, name)
            if v is not None and v < 0:
                problems.append(f"{name} negative")
    elif isinstance(record, HttpRecord):
        _check_port(record, "server_port", problems)
        if record.response_code != 0 and not 100 <= record.response_code <= 599:
            problems.append("response_code out of range")
        if record.response_time_s is not None and record.response_time_s < 0:
            problems.append("response_time_s negative")
    elif isinstance(record, DnsRecord):
        if record.rcode < -1:
            problems.append("rcode out of range")
        if record.response_time_ms is not None and record.response_time_ms < 0:
            problems.append("response_time_ms negative")
    elif isinstance(record, IcmpRecord):
        if not 0 <= record.icmp_type <= 255:
            problems.append("icmp_type out of range")
        if not 0 <= record.icmp_code <= 255:
            problems.append("icmp_code out of range")
        if record.count < 1:
            problems.append("count < 1")
    return problems
