"""Fixed-resolution time series and their construction from flow records."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels


@dataclass(frozen=True)
class TimeSeries:
    """``values[i]`` covers ``[t0 + i*resolution, t0 + (i+1)*resolution)``."""

    t0: float
    resolution: float
    values: np.ndarray = field(repr=False)
    unit: str = ""

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> float:
        return self.t0 + len(self.values) * self.resolution

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.values)) * self.resolution

    def integral(self) -> float:
        """Sum of value x bin width (e.g. bits for a bits/s series)."""
        return float(self.values.sum() * self.resolution)

    def scaled(self, factor: float) -> "TimeSeries":
        return TimeSeries(self.t0, self.resolution, self.values * factor, self.unit)

    def bins_overlapping(self, start: float, end: float) -> slice:
        """Index range of the bins that intersect ``[start, end)``."""
        lo = max(0, int(math.floor((start - self.t0) / self.resolution)))
        hi = min(len(self.values), int(math.ceil((end - self.t0) / self.resolution)))
        return slice(lo, max(lo, hi))

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "value"])
            for t, v in zip(self.times().tolist(), self.values.tolist()):
                w.writerow([repr(t), repr(v)])
        return path

    @classmethod
    def from_csv(cls, path: str | Path, unit: str = "") -> "TimeSeries":
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        if not rows:
            return cls(0.0, 1.0, np.zeros(0), unit)
        t = np.array([float(r[0]) for r in rows])
        res = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(float(t[0]), res, np.array([float(r[1]) for r in rows]), unit)


def _aligned_start(tmin: float, resolution: float) -> float:
    return math.floor(tmin / resolution) * resolution


def reconstruct_arrays(starts, ends, nbytes, resolution: float = 1.0, t0: float | None = None,
                       t_end: float | None = None) -> TimeSeries:
    """Bits/s series from per-flow byte totals, assuming a constant rate per flow.

    Each flow adds ``8*bytes/duration`` to every bin it overlaps, weighted by
    the overlapped fraction of the bin, so the integral of the series is
    exactly ``8 * sum(bytes)``. A zero-duration flow puts all its bits in
    the bin holding its start.
    """
    if not resolution > 0:
        raise ValueError("resolution must be > 0")
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    ends = np.ascontiguousarray(ends, dtype=np.float64)
    nbytes = np.ascontiguousarray(nbytes, dtype=np.float64)
    if not (len(starts) == len(ends) == len(nbytes)):
        raise ValueError("starts, ends and nbytes differ in length")
    if len(starts) == 0:
        base = 0.0 if t0 is None else t0
        n = 0 if t_end is None else max(0, int(math.ceil((t_end - base) / resolution)))
        return TimeSeries(base, resolution, np.zeros(n), "bits/s")
    bad = np.flatnonzero(ends < starts)
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"flow {i} has negative duration: ts_start={starts[i]!r} > ts_end={ends[i]!r}")
    if t0 is None:
        t0 = _aligned_start(float(starts.min()), resolution)
    elif float(starts.min()) < t0:
        raise ValueError("t0 is after the earliest flow start")
    last = float(max(ends.max(), starts.max()))
    nbins = max(int(math.ceil((last - t0) / resolution)), int(math.floor((float(starts.max()) - t0) / resolution)) + 1)
    if t_end is not None:
        nbins = max(nbins, int(math.ceil((t_end - t0) / resolution)))
    values = kernels.reconstruct(starts, ends, nbytes, float(t0), float(resolution), nbins)
    return TimeSeries(float(t0), resolution, values, "bits/s")


def reconstruct(flows: Iterable, resolution: float = 1.0, t0: float | None = None,
                t_end: float | None = None) -> TimeSeries:
    """:func:`reconstruct_arrays` over ``(ts_start, ts_end, bytes)`` triples or mappings."""
    s, e, b = [], [], []
    for f in flows:
        if isinstance(f, dict):
            s.append(f["ts_start"])
            e.append(f["ts_end"])
            b.append(f["bytes"])
        else:
            s.append(f[0])
            e.append(f[1])
            b.append(f[2])
    return reconstruct_arrays(s, e, b, resolution, t0, t_end)


def resample(series: TimeSeries, new_resolution: float) -> TimeSeries:
    """Average groups of bins; a trailing partial group averages what it covers."""
    ratio = new_resolution / series.resolution
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"new resolution {new_resolution} is not a positive multiple of {series.resolution}"
        )
    if k == 1:
        return TimeSeries(series.t0, series.resolution, series.values.copy(), series.unit)
    n = len(series)
    full = n // k
    head = series.values[: full * k].reshape(full, k).mean(axis=1) if full else np.zeros(0)
    if n % k:
        head = np.append(head, series.values[full * k:].mean())
    return TimeSeries(series.t0, float(new_resolution), head, series.unit)


def rolling_variability(series: TimeSeries, window_bins: int) -> TimeSeries:
    """Coefficient of variation over a centered window of ``window_bins`` bins.

    Windows are truncated at the series edges, not padded. A window whose
    mean is zero scores 0.
    """
    if window_bins < 1 or window_bins % 2 == 0:
        raise ValueError(f"window must be a positive odd number of bins, got {window_bins}")
    values = np.ascontiguousarray(series.values, dtype=np.float64)
    return TimeSeries(series.t0, series.resolution, kernels.rolling_cv(values, int(window_bins)), "cv")


def bin_events(ts, resolution: float, weights=None, t0: float | None = None,
               t_end: float | None = None) -> TimeSeries:
    ts = np.asarray(ts, dtype=np.float64)
    if t0 is None:
        t0 = _aligned_start(float(ts.min()), resolution) if len(ts) else 0.0
    if len(ts):
        idx = np.floor((ts - t0) / resolution).astype(np.int64)
        if idx.min() < 0:
            raise ValueError("t0 is after the earliest timestamp")
        n = int(idx.max()) + 1
    else:
        idx = np.zeros(0, np.int64)
        n = 0
    if t_end is not None:
        n = max(n, int(math.ceil((t_end - t0) / resolution)))
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    counts = np.bincount(idx, weights=w, minlength=n).astype(np.float64)
    return TimeSeries(float(t0), resolution, counts)


def series_from_batch(batch, ts_column: str, value_semantics: str | Sequence = "event_count",
                      resolution: float = 1.0, t0: float | None = None,
                      t_end: float | None = None) -> TimeSeries:
    """Bin a batch's rows by timestamp.

    ``value_semantics`` is ``"event_count"``, ``("sum", column)`` or
    ``("mean", column)``; the string forms ``"sum:column"`` and
    ``"mean:column"`` are accepted too. Rows with an absent timestamp (or an
    absent value, for sum and mean) are ignored; empty bins of a mean series
    are 0.
    """
    if ts_column not in batch:
        raise KeyError(f"missing column {ts_column!r}")
    if isinstance(value_semantics, str) and ":" in value_semantics:
        value_semantics = tuple(value_semantics.split(":", 1))
    tcol = batch.column(ts_column)
    keep = tcol.present
    if value_semantics == "event_count":
        return _with_unit(bin_events(tcol.values[keep], resolution, None, t0, t_end), "events/bin")
    how, column = value_semantics
    if column not in batch:
        raise KeyError(f"missing column {column!r}")
    vcol = batch.column(column)
    keep = keep & vcol.present
    ts = tcol.values[keep]
    vals = vcol.values[keep].astype(np.float64)
    if t0 is None and len(tcol.values[tcol.present]):
        t0 = _aligned_start(float(tcol.values[tcol.present].min()), resolution)
    sums = bin_events(ts, resolution, vals, t0, t_end)
    if how == "sum":
        return _with_unit(sums, column)
    if how == "mean":
        counts = bin_events(ts, resolution, None, sums.t0, sums.end if len(sums) else t_end)
        c = counts.values[: len(sums)]
        c = np.pad(c, (0, len(sums) - len(c)))
        mean = np.divide(sums.values, c, out=np.zeros(len(sums)), where=c > 0)
        return TimeSeries(sums.t0, resolution, mean, column)
    raise ValueError(f"unknown value semantics {value_semantics!r}")


def _with_unit(s: TimeSeries, unit: str) -> TimeSeries:
    return TimeSeries(s.t0, s.resolution, s.values, unit)
