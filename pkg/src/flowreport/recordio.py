"""Single-pass reading of record files into columnar batches.

A :class:`Dataset` is a directory of ``<protocol>.records[.gz]`` files. Work on
one protocol is described by an :class:`OpChain` of deferred steps (filter,
derive, project, group_aggregate, top_n) and only runs when the chain is
materialized. Row-wise steps are applied to every parsed block while the file
streams past, so each source byte is read once; aggregation and top-N keep
only their own state. Results are cached on the chain, and chains built on
top of a cached chain start from that cache instead of the file.
"""

from __future__ import annotations

import gzip
import io
import math
import operator
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .records import (
    PROTOCOLS,
    RECORD_TYPES,
    SCHEMAS,
    SECONDS_COLUMNS,
    ConversationRecord,
    FlowRecord,
    Layer,
)

_FILE_RE = re.compile(r"^(?P<proto>[a-z]+)\.records(?P<gz>\.gz)?$")
AGGREGATIONS = ("sum", "count", "mean", "min", "max", "median", "stddev")


class RecordIOError(Exception):
    """Base class for dataset and parsing errors."""


class DatasetError(RecordIOError):
    pass


class ParseError(RecordIOError):
    def __init__(self, path, line: int, column: str | None, reason: str):
        self.path, self.line, self.column, self.reason = str(path), line, column, reason
        where = f"{path}:{line}" + (f" column {column!r}" if column else "")
        super().__init__(f"{where}: {reason}")


class ChainError(RecordIOError):
    """A step references a column that does not exist at that point of the chain."""


class RowCapExceeded(RecordIOError):
    pass


# --------------------------------------------------------------------------
# columnar storage


@dataclass(frozen=True)
class Column:
    kind: str  # "i", "f" or "s"
    values: np.ndarray
    absent: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    @property
    def present(self) -> np.ndarray:
        return ~self.absent

    def take(self, index) -> "Column":
        return Column(self.kind, self.values[index], self.absent[index])

    def to_list(self) -> list:
        vals = self.values.tolist()
        return [None if a else v for v, a in zip(vals, self.absent.tolist())]


def _empty_values(kind: str, n: int = 0) -> np.ndarray:
    if kind == "i":
        return np.zeros(n, dtype=np.int64)
    if kind == "f":
        return np.zeros(n, dtype=np.float64)
    return np.full(n, "", dtype=object)


def make_column(kind: str, values, absent=None) -> Column:
    if kind == "s":
        arr = np.empty(len(values), dtype=object)
        arr[:] = list(values) if not isinstance(values, np.ndarray) else values
    else:
        arr = np.asarray(values, dtype=np.int64 if kind == "i" else np.float64)
    if absent is None:
        absent = np.zeros(len(arr), dtype=np.bool_)
    return Column(kind, arr, np.asarray(absent, dtype=np.bool_))


class RecordBatch:
    """Immutable set of equally long named columns."""

    __slots__ = ("_columns", "_nrows")

    def __init__(self, columns: Mapping[str, Column], nrows: int | None = None):
        cols = dict(columns)
        lengths = {len(c) for c in cols.values()}
        if nrows is None:
            nrows = lengths.pop() if lengths else 0
            if lengths:
                raise ValueError("columns differ in length")
        elif lengths and lengths != {nrows}:
            raise ValueError("columns differ in length")
        for name, c in cols.items():
            if len(c.absent) != len(c.values):
                raise ValueError(f"absence mask of {name!r} has the wrong length")
        self._columns = cols
        self._nrows = nrows

    @classmethod
    def empty(cls, schema: Sequence[tuple[str, str]]) -> "RecordBatch":
        return cls({name: Column(kind, _empty_values(kind), np.zeros(0, np.bool_)) for name, kind in schema}, 0)

    @classmethod
    def from_rows(cls, schema: Sequence[tuple[str, str]], rows: Iterable[Sequence[Any]]) -> "RecordBatch":
        rows = list(rows)
        cols = {}
        for j, (name, kind) in enumerate(schema):
            raw = [r[j] for r in rows]
            absent = [v is None for v in raw]
            fill = "" if kind == "s" else 0
            cols[name] = make_column(kind, [fill if v is None else v for v in raw], absent)
        return cls(cols, len(rows))

    @staticmethod
    def concat(batches: Sequence["RecordBatch"], schema: Sequence[tuple[str, str]] | None = None) -> "RecordBatch":
        batches = [b for b in batches if b is not None]
        if not batches:
            return RecordBatch.empty(schema or [])
        if len(batches) == 1:
            return batches[0]
        names = batches[0].names
        cols = {}
        for name in names:
            parts = [b.column(name) for b in batches]
            cols[name] = Column(
                parts[0].kind,
                np.concatenate([p.values for p in parts]),
                np.concatenate([p.absent for p in parts]),
            )
        return RecordBatch(cols, sum(len(b) for b in batches))

    def __len__(self) -> int:
        return self._nrows

    def __contains__(self, name: str) -> bool:
        return name in self._columns

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RecordBatch) or self.schema != other.schema or len(self) != len(other):
            return False
        for name in self.names:
            a, b = self._columns[name], other._columns[name]
            if not np.array_equal(a.absent, b.absent):
                return False
            if not np.array_equal(a.values[a.present], b.values[b.present]):
                return False
        return True

    def __repr__(self) -> str:
        return f"RecordBatch({self._nrows} rows, {self.names})"

    @property
    def names(self) -> list[str]:
        return list(self._columns)

    @property
    def schema(self) -> list[tuple[str, str]]:
        return [(n, c.kind) for n, c in self._columns.items()]

    def column(self, name: str) -> Column:
        try:
            return self._columns[name]
        except KeyError:
            raise KeyError(f"no column {name!r}; have {self.names}") from None

    __getitem__ = column

    def values(self, name: str) -> np.ndarray:
        return self.column(name).values

    def take(self, index) -> "RecordBatch":
        cols = {n: c.take(index) for n, c in self._columns.items()}
        n = int(np.count_nonzero(index)) if getattr(index, "dtype", None) == np.bool_ else len(np.asarray(index))
        return RecordBatch(cols, n)

    def select(self, names: Sequence[str]) -> "RecordBatch":
        return RecordBatch({n: self.column(n) for n in names}, self._nrows)

    def with_column(self, name: str, col: Column) -> "RecordBatch":
        cols = dict(self._columns)
        cols[name] = col
        return RecordBatch(cols, self._nrows)

    def rows(self) -> Iterator[tuple]:
        lists = [c.to_list() for c in self._columns.values()]
        return iter(zip(*lists)) if lists else iter(())

    def to_dicts(self) -> list[dict]:
        names = self.names
        return [dict(zip(names, r)) for r in self.rows()]


# --------------------------------------------------------------------------
# predicates


class Expr:
    """Vectorized boolean predicate over named columns."""

    def columns(self) -> set[str]:
        raise NotImplementedError

    def evaluate(self, batch: RecordBatch) -> np.ndarray:
        raise NotImplementedError

    def __and__(self, other: "Expr") -> "Expr":
        return _Bool(np.logical_and, self, other)

    def __or__(self, other: "Expr") -> "Expr":
        return _Bool(np.logical_or, self, other)

    def __invert__(self) -> "Expr":
        return _Not(self)


class _Bool(Expr):
    def __init__(self, fn, a: Expr, b: Expr):
        self.fn, self.a, self.b = fn, a, b

    def columns(self):
        return self.a.columns() | self.b.columns()

    def evaluate(self, batch):
        return self.fn(self.a.evaluate(batch), self.b.evaluate(batch))


class _Not(Expr):
    def __init__(self, a: Expr):
        self.a = a

    def columns(self):
        return self.a.columns()

    def evaluate(self, batch):
        return ~self.a.evaluate(batch)


class _Compare(Expr):
    def __init__(self, op, name: str, other: Any):
        self.op, self.name, self.other = op, name, other

    def columns(self):
        cols = {self.name}
        if isinstance(self.other, ColRef):
            cols.add(self.other.name)
        return cols

    def evaluate(self, batch):
        c = batch.column(self.name)
        ok = c.present
        if isinstance(self.other, ColRef):
            o = batch.column(self.other.name)
            rhs = o.values
            ok = ok & o.present
        else:
            rhs = self.other
        res = np.asarray(self.op(c.values, rhs), dtype=np.bool_)
        return res & ok


class _IsIn(Expr):
    def __init__(self, name: str, values: Iterable[Any]):
        self.name, self.values = name, list(values)

    def columns(self):
        return {self.name}

    def evaluate(self, batch):
        c = batch.column(self.name)
        if c.kind == "s":
            wanted = set(self.values)
            res = np.fromiter((v in wanted for v in c.values), dtype=np.bool_, count=len(c))
        else:
            res = np.isin(c.values, np.asarray(self.values))
        return res & c.present


class _Absent(Expr):
    def __init__(self, name: str):
        self.name = name

    def columns(self):
        return {self.name}

    def evaluate(self, batch):
        return batch.column(self.name).absent.copy()


class _FnExpr(Expr):
    def __init__(self, fn: Callable[[RecordBatch], np.ndarray], needs: Iterable[str]):
        self.fn, self.needs = fn, set(needs)

    def columns(self):
        return set(self.needs)

    def evaluate(self, batch):
        return np.asarray(self.fn(batch), dtype=np.bool_)


class ColRef:
    """``col("dst_port") == 80``; comparisons never match absent values."""

    def __init__(self, name: str):
        self.name = name

    def __eq__(self, other):  # type: ignore[override]
        return _Compare(operator.eq, self.name, other)

    def __ne__(self, other):  # type: ignore[override]
        return _Compare(operator.ne, self.name, other)

    def __lt__(self, other):
        return _Compare(operator.lt, self.name, other)

    def __le__(self, other):
        return _Compare(operator.le, self.name, other)

    def __gt__(self, other):
        return _Compare(operator.gt, self.name, other)

    def __ge__(self, other):
        return _Compare(operator.ge, self.name, other)

    __hash__ = None  # type: ignore[assignment]

    def isin(self, values: Iterable[Any]) -> Expr:
        return _IsIn(self.name, values)

    def is_absent(self) -> Expr:
        return _Absent(self.name)

    def is_present(self) -> Expr:
        return ~_Absent(self.name)


def col(name: str) -> ColRef:
    return ColRef(name)


def where(fn: Callable[[RecordBatch], np.ndarray], needs: Iterable[str]) -> Expr:
    """Wrap an arbitrary vectorized predicate that reads the columns ``needs``."""
    return _FnExpr(fn, needs)


# --------------------------------------------------------------------------
# chain steps

Schema = list  # list[tuple[str, str]]


def _check(schema: Schema, names: Iterable[str], what: str) -> None:
    have = {n for n, _ in schema}
    missing = [n for n in names if n not in have]
    if missing:
        raise ChainError(f"{what}: unknown column(s) {missing}; available {sorted(have)}")


class Step:
    blocking = False

    def output_schema(self, schema: Schema) -> Schema:
        return schema

    def needed_inputs(self, needed_out: set[str]) -> set[str]:
        return set(needed_out)

    def apply(self, batch: RecordBatch) -> RecordBatch:
        raise NotImplementedError


class Filter(Step):
    def __init__(self, pred: Expr):
        self.pred = pred

    def output_schema(self, schema):
        _check(schema, self.pred.columns(), "filter")
        return schema

    def needed_inputs(self, needed_out):
        return set(needed_out) | self.pred.columns()

    def apply(self, batch):
        if len(batch) == 0:
            return batch
        return batch.take(self.pred.evaluate(batch))


class Project(Step):
    def __init__(self, names: Sequence[str]):
        self.names = list(names)

    def output_schema(self, schema):
        _check(schema, self.names, "project")
        kinds = dict(schema)
        return [(n, kinds[n]) for n in self.names]

    def needed_inputs(self, needed_out):
        return set(needed_out) & set(self.names)

    def apply(self, batch):
        return batch.select(self.names)


class Derive(Step):
    """Adds a computed column (the "map" operation)."""

    def __init__(self, name: str, fn: Callable[[RecordBatch], Any], kind: str, needs: Iterable[str]):
        self.name, self.fn, self.kind, self.needs = name, fn, kind, list(needs)

    def output_schema(self, schema):
        _check(schema, self.needs, f"derive {self.name}")
        return [(n, k) for n, k in schema if n != self.name] + [(self.name, self.kind)]

    def needed_inputs(self, needed_out):
        return (set(needed_out) - {self.name}) | set(self.needs)

    def apply(self, batch):
        out = self.fn(batch)
        if isinstance(out, Column):
            c = out
        else:
            absent = np.zeros(len(batch), np.bool_)
            for n in self.needs:
                absent |= batch.column(n).absent
            c = make_column(self.kind, out, absent)
        return batch.with_column(self.name, c)


@dataclass
class _GroupState:
    index: dict = field(default_factory=dict)  # key -> group id, in first-seen order
    sums: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    mins: dict = field(default_factory=dict)
    maxs: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    buffered: int = 0


def _grow(arr: np.ndarray, n: int, fill) -> np.ndarray:
    if len(arr) >= n:
        return arr
    out = np.full(max(n, 2 * len(arr)), fill, dtype=arr.dtype)
    out[: len(arr)] = arr
    return out


class GroupAggregate(Step):
    """Group by ``keys`` and compute ``aggs`` = {output: (function, column)}.

    ``count`` with column ``None`` counts rows; every other function skips
    absent values. Rows whose key is absent form their own group with key
    ``None``. Median and stddev buffer each group's values (exact); stddev is
    the population standard deviation.
    """

    blocking = True

    def __init__(self, keys: Sequence[str], aggs: Mapping[str, tuple[str, str | None]]):
        self.keys = list(keys)
        self.aggs = dict(aggs)
        for out, (fn, column) in self.aggs.items():
            if fn not in AGGREGATIONS:
                raise ChainError(f"unknown aggregation {fn!r} for {out!r}")
            if column is None and fn != "count":
                raise ChainError(f"aggregation {fn!r} for {out!r} needs a column")
        self.max_buffered: int | None = None

    def output_schema(self, schema):
        _check(schema, self.keys, "group_aggregate keys")
        _check(schema, [c for _, c in self.aggs.values() if c is not None], "group_aggregate")
        kinds = dict(schema)
        out = [(k, kinds[k]) for k in self.keys]
        for name, (fn, column) in self.aggs.items():
            if fn == "count":
                kind = "i"
            elif fn in ("sum", "min", "max"):
                kind = kinds[column]
                if kind == "s" and fn == "sum":
                    raise ChainError(f"cannot sum text column {column!r}")
            else:
                kind = "f"
            out.append((name, kind))
        return out

    def needed_inputs(self, needed_out):
        return set(self.keys) | {c for _, c in self.aggs.values() if c is not None}

    def start(self) -> _GroupState:
        return _GroupState()

    def feed(self, state: _GroupState, batch: RecordBatch) -> None:
        n = len(batch)
        if n == 0:
            return
        keycols = [batch.column(k) for k in self.keys]
        keylists = [
            [None if a else v for v, a in zip(c.values.tolist(), c.absent.tolist())] if c.absent.any() else c.values.tolist()
            for c in keycols
        ]
        index = state.index
        codes = np.empty(n, dtype=np.int64)
        if len(keylists) == 1:
            it = keylists[0]
        elif keylists:
            it = zip(*keylists)
        else:
            it = [()] * n
        setdefault = index.setdefault
        for i, k in enumerate(it):
            g = setdefault(k, len(index))
            codes[i] = g
        ng = len(index)
        for out, (fn, column) in self.aggs.items():
            if column is None:
                cnt = state.counts.get(out, np.zeros(0, np.int64))
                cnt = _grow(cnt, ng, 0)
                cnt[:ng] += np.bincount(codes, minlength=ng)[:ng]
                state.counts[out] = cnt
                continue
            c = batch.column(column)
            ok = c.present
            cc = codes[ok]
            vals = c.values[ok]
            cnt = _grow(state.counts.get(out, np.zeros(0, np.int64)), ng, 0)
            cnt[:ng] += np.bincount(cc, minlength=ng)[:ng]
            state.counts[out] = cnt
            if fn in ("sum", "mean"):
                if c.kind == "i" and fn == "sum":
                    s = _grow(state.sums.get(out, np.zeros(0, np.int64)), ng, 0)
                    np.add.at(s, cc, vals)
                else:
                    s = _grow(state.sums.get(out, np.zeros(0, np.float64)), ng, 0.0)
                    s[:ng] += np.bincount(cc, weights=vals.astype(np.float64), minlength=ng)[:ng]
                state.sums[out] = s
            elif fn in ("min", "max"):
                if c.kind == "s":
                    store = state.mins if fn == "min" else state.maxs
                    cur = store.setdefault(out, {})
                    better = operator.lt if fn == "min" else operator.gt
                    for g, v in zip(cc.tolist(), vals.tolist()):
                        if g not in cur or better(v, cur[g]):
                            cur[g] = v
                    continue
                dtype = np.int64 if c.kind == "i" else np.float64
                if fn == "min":
                    fill = np.iinfo(np.int64).max if c.kind == "i" else np.inf
                    m = _grow(state.mins.get(out, np.zeros(0, dtype)), ng, fill)
                    np.minimum.at(m, cc, vals)
                    state.mins[out] = m
                else:
                    fill = np.iinfo(np.int64).min if c.kind == "i" else -np.inf
                    m = _grow(state.maxs.get(out, np.zeros(0, dtype)), ng, fill)
                    np.maximum.at(m, cc, vals)
                    state.maxs[out] = m
            else:  # median, stddev
                buf = state.buffers.setdefault(out, [])
                order = np.argsort(cc, kind="stable")
                scc = cc[order]
                svals = vals[order].astype(np.float64)
                bounds = np.flatnonzero(np.diff(scc)) + 1
                starts = np.concatenate(([0], bounds)) if len(scc) else np.zeros(0, np.int64)
                ends = np.concatenate((bounds, [len(scc)])) if len(scc) else np.zeros(0, np.int64)
                if len(buf) < ng:
                    buf.extend([] for _ in range(ng - len(buf)))
                for s0, e0 in zip(starts.tolist(), ends.tolist()):
                    buf[int(scc[s0])].append(svals[s0:e0])
                state.buffered += len(vals)
                if self.max_buffered is not None and state.buffered > self.max_buffered:
                    raise RowCapExceeded(f"{out}: more than {self.max_buffered} buffered values")

    def finish(self, state: _GroupState, schema_in: Schema) -> RecordBatch:
        ng = len(state.index)
        kinds = dict(schema_in)
        cols: dict[str, Column] = {}
        group_keys = list(state.index)
        for j, k in enumerate(self.keys):
            raw = [key[j] if len(self.keys) > 1 else key for key in group_keys]
            absent = [v is None for v in raw]
            fill = "" if kinds[k] == "s" else 0
            cols[k] = make_column(kinds[k], [fill if v is None else v for v in raw], absent)
        for out, (fn, column) in self.aggs.items():
            cnt = state.counts.get(out, np.zeros(ng, np.int64))[:ng]
            cnt = np.pad(cnt, (0, ng - len(cnt)))
            empty = cnt == 0
            if fn == "count":
                cols[out] = make_column("i", cnt)
            elif fn == "sum":
                kind = kinds[column]
                s = state.sums.get(out, np.zeros(ng, np.int64 if kind == "i" else np.float64))[:ng]
                s = np.pad(s, (0, ng - len(s)))
                cols[out] = make_column(kind, s, empty if kind == "s" else None)
            elif fn == "mean":
                s = state.sums.get(out, np.zeros(ng))[:ng]
                s = np.pad(s, (0, ng - len(s)))
                with np.errstate(invalid="ignore", divide="ignore"):
                    m = np.where(empty, 0.0, s / np.maximum(cnt, 1))
                cols[out] = make_column("f", m, empty)
            elif fn in ("min", "max"):
                store = (state.mins if fn == "min" else state.maxs).get(out)
                kind = kinds[column]
                if kind == "s":
                    store = store or {}
                    vals = [store.get(g, "") for g in range(ng)]
                    cols[out] = make_column("s", vals, [g not in store for g in range(ng)])
                else:
                    arr = store[:ng] if store is not None else _empty_values(kind, 0)
                    arr = np.pad(arr, (0, ng - len(arr)))
                    arr = np.where(empty, 0, arr)
                    cols[out] = make_column(kind, arr, empty)
            else:
                bufs = state.buffers.get(out, [])
                vals = np.zeros(ng)
                for g in range(min(ng, len(bufs))):
                    if bufs[g]:
                        v = np.concatenate(bufs[g])
                        vals[g] = float(np.median(v)) if fn == "median" else float(np.std(v))
                cols[out] = make_column("f", vals, empty)
        return RecordBatch(cols, ng)

    def apply(self, batch):
        st = self.start()
        self.feed(st, batch)
        return self.finish(st, batch.schema)


class TopN(Step):
    """Keep the ``n`` rows with the largest (or smallest) ``column`` values.

    Rows with an absent sort value are dropped. Ties keep input order.
    """

    blocking = True

    def __init__(self, column: str, n: int, descending: bool = True):
        if n < 0:
            raise ChainError("top_n: n must be >= 0")
        self.column, self.n, self.descending = column, n, descending

    def output_schema(self, schema):
        _check(schema, [self.column], "top_n")
        return schema

    def needed_inputs(self, needed_out):
        return set(needed_out) | {self.column}

    def _select(self, batch: RecordBatch, seq: np.ndarray) -> tuple[RecordBatch, np.ndarray]:
        c = batch.column(self.column)
        keep = c.present
        batch = batch.take(keep)
        seq = seq[keep]
        c = batch.column(self.column)
        if c.kind == "s":
            order = sorted(range(len(batch)), key=lambda i: c.values[i], reverse=self.descending)
            order = np.asarray(order[: self.n], dtype=np.int64)
        else:
            v = c.values.astype(np.float64) if c.kind == "i" and np.abs(c.values).max(initial=0) < 2**53 else c.values
            primary = -v if self.descending else v
            order = np.lexsort((seq, primary))[: self.n]
        return batch.take(order), seq[order]

    def start(self):
        return {"batch": None, "seq": np.zeros(0, np.int64), "seen": 0}

    def feed(self, state, batch):
        n = len(batch)
        seq = np.arange(state["seen"], state["seen"] + n, dtype=np.int64)
        state["seen"] += n
        if state["batch"] is not None:
            batch = RecordBatch.concat([state["batch"], batch])
            seq = np.concatenate([state["seq"], seq])
        state["batch"], state["seq"] = self._select(batch, seq)

    def finish(self, state, schema_in):
        return state["batch"] if state["batch"] is not None else RecordBatch.empty(schema_in)

    def apply(self, batch):
        st = self.start()
        self.feed(st, batch)
        return self.finish(st, batch.schema)


# --------------------------------------------------------------------------
# datasets and reading


@dataclass
class ReadStats:
    """Per-protocol counters accumulated across every materialization."""

    bytes_read: int = 0
    rows_parsed: int = 0
    rows_skipped: int = 0
    parse_seconds: float = 0.0
    passes: int = 0


@dataclass
class ManifestEntry:
    protocol: str
    path: Path
    compressed: bool
    size: int
    row_count: int | None = None


class _CountingReader(io.RawIOBase):
    """Counts bytes pulled from the underlying file."""

    def __init__(self, raw):
        self._raw = raw
        self.count = 0

    def readable(self):
        return True

    def readinto(self, b):
        n = self._raw.readinto(b)
        self.count += n or 0
        return n

    def close(self):
        self._raw.close()
        super().close()


class Dataset:
    """A directory of record files plus the options used to read them."""

    def __init__(self, root: Path, manifest: dict[str, ManifestEntry], schemas: dict[str, Schema],
                 skip_bad_rows: bool = False, max_rows: int | None = None, block_bytes: int = 1 << 20):
        self.root = root
        self.manifest = manifest
        self.schemas = schemas
        self.skip_bad_rows = skip_bad_rows
        self.max_rows = max_rows
        self.block_bytes = block_bytes
        self.stats: dict[str, ReadStats] = {p: ReadStats() for p in manifest}

    def __contains__(self, protocol: str) -> bool:
        return protocol in self.manifest

    def __repr__(self) -> str:
        return f"Dataset({str(self.root)!r}, {sorted(self.manifest)})"

    @property
    def protocols(self) -> list[str]:
        return [p for p in PROTOCOLS if p in self.manifest]

    def chain(self, protocol: str) -> "OpChain":
        if protocol not in self.manifest:
            raise DatasetError(f"no {protocol} records in {self.root}")
        return OpChain(self, protocol)

    def _open_raw(self, protocol: str):
        entry = self.manifest[protocol]
        counter = _CountingReader(open(entry.path, "rb", buffering=0))
        buffered = io.BufferedReader(counter, buffer_size=self.block_bytes)
        stream = gzip.GzipFile(fileobj=buffered, mode="rb") if entry.compressed else buffered
        return counter, stream

    def iter_blocks(self, protocol: str, needed: set[str] | None = None) -> Iterator[RecordBatch]:
        """Stream the file once, yielding parsed blocks holding ``needed`` columns."""
        entry = self.manifest[protocol]
        schema = self.schemas[protocol]
        kinds = bytes(
            (ord(k) if needed is None or n in needed else ord("x")) for n, k in schema
        )
        out_names = [n for n, _ in schema if needed is None or n in needed]
        stats = self.stats[protocol]
        stats.passes += 1
        counter, stream = self._open_raw(protocol)
        t_parse = 0.0
        try:
            t0 = time.perf_counter()
            stream.readline()  # header, validated at open time
            line_no = 2
            carry = b""
            eof = False
            while not eof:
                chunk = stream.read(self.block_bytes)
                if not chunk:
                    eof = True
                    buf, carry = carry, b""
                else:
                    cut = chunk.rfind(b"\n")
                    if cut < 0:
                        carry += chunk
                        continue
                    # avoid copying the chunk when nothing is carried over
                    buf = carry + chunk[: cut + 1] if carry else memoryview(chunk)[: cut + 1]
                    carry = chunk[cut + 1:]
                if not len(buf):
                    continue
                cols, masks, nrows, skipped, error, nlines = kernels.parse_block(buf, kinds, self.skip_bad_rows, line_no)
                if error is not None:
                    ln, j, reason = error
                    raise ParseError(entry.path, ln, schema[j][0] if j >= 0 else None, reason)
                line_no += nlines
                stats.rows_parsed += nrows
                stats.rows_skipped += skipped
                batch_cols = {}
                for (name, kind), values, absent in zip(schema, cols, masks):
                    if values is None:
                        continue
                    batch_cols[name] = Column(kind, values, absent)
                batch = RecordBatch({n: batch_cols[n] for n in out_names}, nrows)
                t_parse += time.perf_counter() - t0
                yield batch
                t0 = time.perf_counter()
            t_parse += time.perf_counter() - t0
        finally:
            stream.close()
            stats.bytes_read += counter.count
            stats.parse_seconds += t_parse


def _read_header(path: Path, compressed: bool) -> list[str]:
    opener = gzip.open if compressed else open
    try:
        with opener(path, "rb") as fh:
            line = fh.readline()
    except (OSError, EOFError) as exc:
        raise DatasetError(f"{path}: cannot read header ({exc})") from exc
    line = line.rstrip(b"\n")
    if not line.startswith(b"#"):
        raise DatasetError(f"{path}: header line must start with '#'")
    try:
        names = line[1:].decode("utf-8").split("\t")
    except UnicodeDecodeError:
        raise DatasetError(f"{path}: header is not valid UTF-8") from None
    if any(not n for n in names):
        raise DatasetError(f"{path}: empty column name in header")
    if len(set(names)) != len(names):
        raise DatasetError(f"{path}: duplicate column names in header")
    return names


def _option(config, key: str, default):
    if config is None:
        return default
    try:
        return config[key]
    except KeyError:
        return default


def open_dataset(path: str | os.PathLike, config: Mapping[str, Any] | None = None) -> Dataset:
    """Index the record files under ``path`` without reading any rows."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    manifest: dict[str, ManifestEntry] = {}
    schemas: dict[str, Schema] = {}
    for p in sorted(root.iterdir()):
        m = _FILE_RE.match(p.name)
        if not m or not p.is_file() or m["proto"] not in PROTOCOLS:
            continue
        proto = m["proto"]
        if proto in manifest:
            raise DatasetError(f"duplicate {proto} files: {manifest[proto].path.name} and {p.name}")
        compressed = bool(m["gz"])
        names = _read_header(p, compressed)
        declared = dict(SCHEMAS[proto])
        missing = [n for n in declared if n not in names]
        if missing:
            raise DatasetError(f"{p}: header lacks mandatory column(s) {missing}")
        schemas[proto] = [(n, declared.get(n, "s")) for n in names]
        manifest[proto] = ManifestEntry(proto, p, compressed, p.stat().st_size)
    return Dataset(
        root, manifest, schemas,
        skip_bad_rows=bool(_option(config, "io.skip_bad_rows", False)),
        max_rows=_option(config, "io.max_rows", None),
        block_bytes=int(_option(config, "io.block_bytes", 1 << 20)),
    )


# --------------------------------------------------------------------------
# op chains


class OpChain:
    """Deferred operations over one protocol of a dataset.

    Builder methods return new chains; the receiver is unchanged.
    """

    def __init__(self, dataset: Dataset, protocol: str, parent: "OpChain | None" = None,
                 step: Step | None = None, schema: Schema | None = None):
        self.dataset = dataset
        self.protocol = protocol
        self.parent = parent
        self.step = step
        self.schema: Schema = schema if schema is not None else list(dataset.schemas[protocol])
        self._cache: RecordBatch | None = None
        self.evaluations = 0

    def _extend(self, step: Step) -> "OpChain":
        return OpChain(self.dataset, self.protocol, self, step, step.output_schema(self.schema))

    @property
    def steps(self) -> list[Step]:
        out = []
        node = self
        while node is not None and node.step is not None:
            out.append(node.step)
            node = node.parent
        return out[::-1]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.schema]

    def filter(self, pred: Expr | None = None, **equals: Any) -> "OpChain":
        """Keep rows matching ``pred`` and every ``column=value`` keyword."""
        exprs = [pred] if pred is not None else []
        exprs += [col(k) == v for k, v in equals.items()]
        if not exprs:
            return self
        combined = exprs[0]
        for e in exprs[1:]:
            combined = combined & e
        return self._extend(Filter(combined))

    def project(self, names: Sequence[str]) -> "OpChain":
        return self._extend(Project(names))

    def derive(self, name: str, fn: Callable[[RecordBatch], Any], kind: str, needs: Iterable[str]) -> "OpChain":
        return self._extend(Derive(name, fn, kind, needs))

    def group_aggregate(self, keys: Sequence[str], aggs: Mapping[str, tuple[str, str | None]]) -> "OpChain":
        return self._extend(GroupAggregate(keys, aggs))

    def top_n(self, column: str, n: int, order: str = "desc") -> "OpChain":
        if order not in ("desc", "asc"):
            raise ChainError("top_n order must be 'desc' or 'asc'")
        return self._extend(TopN(column, n, descending=order == "desc"))

    def count(self) -> int:
        return len(self.materialize())

    def materialize(self) -> RecordBatch:
        if self._cache is None:
            self._cache = self._evaluate()
            self.evaluations += 1
        return self._cache

    def _evaluate(self) -> RecordBatch:
        # start from the closest cached ancestor if there is one
        pending: list[Step] = []
        node: OpChain | None = self
        while node is not None and node._cache is None and node.step is not None:
            pending.append(node.step)
            node = node.parent
        pending.reverse()
        if node is not None and node._cache is not None:
            batch = node._cache
            for step in pending:
                batch = step.apply(batch)
            return batch
        return self._stream(pending)

    def _stream(self, steps: list[Step]) -> RecordBatch:
        ds = self.dataset
        needed = {n for n, _ in self.schema}
        for step in reversed(steps):
            needed = step.needed_inputs(needed)
        source_names = {n for n, _ in ds.schemas[self.protocol]}
        needed &= source_names
        cap = ds.max_rows

        split = next((i for i, s in enumerate(steps) if s.blocking), len(steps))
        rowwise, blocking, rest = steps[:split], steps[split] if split < len(steps) else None, steps[split + 1:]
        schema_at_block = list(ds.schemas[self.protocol])
        schema_at_block = [(n, k) for n, k in schema_at_block if n in needed]
        for s in rowwise:
            schema_at_block = s.output_schema(schema_at_block)

        parts: list[RecordBatch] = []
        kept = 0
        state = None
        if blocking is not None:
            if isinstance(blocking, GroupAggregate):
                blocking.max_buffered = cap
            state = blocking.start()
        for block in ds.iter_blocks(self.protocol, needed):
            for s in rowwise:
                block = s.apply(block)
            if state is not None:
                blocking.feed(state, block)
            else:
                kept += len(block)
                if cap is not None and kept > cap:
                    raise RowCapExceeded(f"{self.protocol}: materialization exceeds io.max_rows={cap}")
                parts.append(block)
        if state is not None:
            batch = blocking.finish(state, schema_at_block)
        else:
            batch = RecordBatch.concat(parts, schema_at_block)
        for s in rest:
            batch = s.apply(batch)
        return batch


def materialize(chain: OpChain) -> RecordBatch:
    return chain.materialize()


@dataclass(frozen=True)
class ScanStats:
    row_count: int
    byte_count: int
    bytes_read: int
    seconds: float
    rows_skipped: int = 0

    @property
    def rows_per_second(self) -> float:
        return self.row_count / self.seconds if self.seconds > 0 else math.inf

    @property
    def bytes_per_second(self) -> float:
        return self.byte_count / self.seconds if self.seconds > 0 else math.inf


def scan_stats(dataset: Dataset, protocol: str) -> ScanStats:
    """Parse every column of one file in a single pass and time it."""
    if protocol not in dataset:
        raise DatasetError(f"no {protocol} records in {dataset.root}")
    st = dataset.stats[protocol]
    before_bytes, before_skipped = st.bytes_read, st.rows_skipped
    rows = 0
    t0 = time.perf_counter()
    for block in dataset.iter_blocks(protocol, None):
        rows += len(block)
    dt = time.perf_counter() - t0
    dataset.manifest[protocol].row_count = rows
    return ScanStats(
        row_count=rows,
        byte_count=dataset.manifest[protocol].size,
        bytes_read=st.bytes_read - before_bytes,
        seconds=dt,
        rows_skipped=st.rows_skipped - before_skipped,
    )


# --------------------------------------------------------------------------
# writing


def _format_column(name: str, kind: str, values, absent) -> list[str]:
    vals = values.tolist() if isinstance(values, np.ndarray) else list(values)
    if kind == "f":
        if name in SECONDS_COLUMNS:
            out = ["%.6f" % v for v in vals]
        else:
            out = [repr(float(v)) for v in vals]
    elif kind == "i":
        out = [str(int(v)) for v in vals]
    else:
        out = [str(v) for v in vals]
        for s in out:
            if "\t" in s or "\n" in s:
                raise ValueError(f"column {name!r}: text values may not contain tabs or newlines: {s!r}")
    if absent is not None:
        ab = absent.tolist() if isinstance(absent, np.ndarray) else list(absent)
        out = ["" if a else s for s, a in zip(out, ab)]
    return out


def write_columns(path: str | os.PathLike, protocol: str, columns: Mapping[str, Any],
                  absent: Mapping[str, Any] | None = None, compress: bool | None = None) -> int:
    """Write a record file from column arrays; returns the number of rows.

    ``columns`` must contain every mandatory column of ``protocol``; extra
    columns are written after them as text.
    """
    path = Path(path)
    declared = SCHEMAS[protocol]
    missing = [n for n, _ in declared if n not in columns]
    if missing:
        raise ValueError(f"{protocol}: missing column(s) {missing}")
    kinds = dict(declared)
    names = [n for n, _ in declared] + [n for n in columns if n not in kinds]
    absent = absent or {}
    formatted = []
    nrows = None
    for n in names:
        vals = columns[n]
        if nrows is None:
            nrows = len(vals)
        elif len(vals) != nrows:
            raise ValueError(f"column {n!r} has {len(vals)} values, expected {nrows}")
        ab = absent.get(n)
        if not isinstance(vals, np.ndarray):
            fill = "" if kinds.get(n, "s") == "s" else 0
            ab = [v is None for v in vals]
            vals = [fill if v is None else v for v in vals]
        formatted.append(_format_column(n, kinds.get(n, "s"), vals, ab))
    nrows = nrows or 0
    if compress is None:
        compress = path.suffix == ".gz"
    header = "#" + "\t".join(names) + "\n"
    body = "\n".join("\t".join(r) for r in zip(*formatted)) + ("\n" if nrows else "")
    data = (header + body).encode("utf-8")
    if compress:
        with open(path, "wb") as raw:
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
                gz.write(data)
    else:
        path.write_bytes(data)
    return nrows


def write_records(path: str | os.PathLike, records: Sequence[FlowRecord], protocol: str | None = None) -> int:
    """Write record objects of one protocol, preserving their extra columns."""
    if protocol is None:
        if not records:
            raise ValueError("protocol is required for an empty record list")
        from .records import protocol_of
        protocol = protocol_of(records[0])
    declared = [n for n, _ in SCHEMAS[protocol]]
    extra_names: list[str] = []
    for r in records:
        for k in r.extra:
            if k not in extra_names:
                extra_names.append(k)
    cols: dict[str, list] = {n: [getattr(r, n) for r in records] for n in declared}
    for k in extra_names:
        cols[k] = [r.extra.get(k) for r in records]
    return write_columns(path, protocol, cols)


def records_from_batch(batch: RecordBatch, protocol: str) -> list[FlowRecord]:
    """Turn a batch holding a full record schema back into record objects."""
    cls = RECORD_TYPES[protocol]
    declared = [n for n, _ in SCHEMAS[protocol]]
    extra = [n for n in batch.names if n not in declared]
    out = []
    for row in batch.to_dicts():
        kw = {n: row[n] for n in declared}
        ex = {n: row[n] for n in extra if row[n] is not None}
        if cls is ConversationRecord:
            out.append(cls(layer=Layer(protocol.upper()), extra=ex, **kw))
        else:
            out.append(cls(extra=ex, **kw))
    return out
