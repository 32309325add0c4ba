"""Pure-Python/numpy versions of the compiled kernels in ``_native.pyx``.

Both modules expose the same three functions with the same semantics; the
kernel parity tests run them side by side.
"""

from __future__ import annotations

import math

import numpy as np

_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1
_BLANKS = frozenset(b" \t\r\n\x0b\x0c")


def _parse_int(raw: bytes) -> int | None:
    if raw[0] in _BLANKS or raw[-1] in _BLANKS or b"_" in raw:
        return None
    try:
        v = int(raw)
    except ValueError:
        return None
    if v < _INT64_MIN or v > _INT64_MAX:
        return None
    return v


def _parse_float(raw: bytes) -> float | None:
    if raw[0] in _BLANKS or raw[-1] in _BLANKS or b"_" in raw or b"x" in raw or b"X" in raw:
        return None
    try:
        v = float(raw)
    except ValueError:
        return None
    if not math.isfinite(v):
        return None
    return v


def parse_block(buf: bytes, kinds: bytes, skip_bad: bool, line_offset: int):
    """Parse complete tab-separated lines into typed columns.

    Returns ``(columns, absent, nrows, skipped, error, nlines)`` exactly like the
    compiled kernel.
    """
    ncols = len(kinds)
    kinds_s = kinds.decode("ascii")
    values: list[list] = [[] for _ in range(ncols)]
    masks: list[list[bool]] = [[] for _ in range(ncols)]
    skipped = 0
    nrows = 0
    error = None
    lines = bytes(buf).split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    nlines = len(lines)
    line_no = line_offset - 1
    for line in lines:
        line_no += 1
        if not line:
            continue
        fields = line.split(b"\t")
        if len(fields) != ncols:
            if skip_bad:
                skipped += 1
                continue
            error = (line_no, -1, f"expected {ncols} fields, got {len(fields)}")
            break
        parsed = []
        bad = False
        for j, (kind, raw) in enumerate(zip(kinds_s, fields)):
            if not raw or kind == "x":
                parsed.append(None)
                continue
            if kind == "i":
                v = _parse_int(raw)
                reason = "invalid integer"
            elif kind == "f":
                v = _parse_float(raw)
                reason = "invalid float"
            else:
                try:
                    v = raw.decode("utf-8")
                except UnicodeDecodeError:
                    v = None
                reason = "invalid UTF-8"
            if v is None:
                bad = True
                if not skip_bad:
                    if kind == "s":
                        error = (line_no, j, reason)
                    else:
                        error = (line_no, j, f"{reason} {raw.decode('utf-8', 'replace')!r}")
                break
            parsed.append(v)
        if bad:
            if skip_bad:
                skipped += 1
                continue
            break
        nrows += 1
        for j, v in enumerate(parsed):
            if kinds_s[j] == "x":
                continue
            if v is None:
                masks[j].append(True)
                values[j].append("" if kinds_s[j] == "s" else 0)
            else:
                masks[j].append(False)
                values[j].append(v)

    columns = []
    absent = []
    for j, kind in enumerate(kinds_s):
        if kind == "i":
            columns.append(np.array(values[j], dtype=np.int64))
        elif kind == "f":
            columns.append(np.array(values[j], dtype=np.float64))
        elif kind == "s":
            arr = np.empty(len(values[j]), dtype=object)
            arr[:] = values[j]
            columns.append(arr)
        else:
            columns.append(None)
            absent.append(None)
            continue
        absent.append(np.array(masks[j], dtype=np.bool_))
    return columns, absent, nrows, skipped, error, nlines


def reconstruct(starts, ends, nbytes, t0: float, resolution: float, nbins: int) -> np.ndarray:
    """Spread each flow's bits uniformly over its lifetime; returns mean bits/s per bin."""
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    nbytes = np.asarray(nbytes, dtype=np.float64)
    dur = ends - starts
    neg = np.flatnonzero(dur < 0)
    if neg.size:
        f = int(neg[0])
        raise ValueError(f"flow {f} has negative duration ({starts[f]} > {ends[f]})")
    diff = np.zeros(nbins + 2, dtype=np.float64)
    rs = (starts - t0) / resolution
    re = (ends - t0) / resolution
    i0 = np.clip(np.floor(rs).astype(np.int64), 0, nbins - 1)
    i1 = np.floor(re).astype(np.int64)

    single = (dur == 0) | (i1 <= i0)
    x = 8.0 * nbytes[single] / resolution
    np.add.at(diff, i0[single], x)
    np.add.at(diff, i0[single] + 1, -x)

    span = ~single
    a = i0[span]
    b = i1[span]
    rate = 8.0 * nbytes[span] / dur[span]
    first = rate * ((a + 1) - rs[span])
    np.add.at(diff, a, first)
    np.add.at(diff, a + 1, rate - first)
    np.add.at(diff, b, -rate)
    tail = b < nbins
    last = rate[tail] * (re[span][tail] - b[tail])
    np.add.at(diff, b[tail], last)
    np.add.at(diff, b[tail] + 1, -last)
    return np.cumsum(diff[:nbins])


def rolling_cv(values, window: int, chunk: int = 4096) -> np.ndarray:
    """Centered-window stddev/mean with edge truncation; 0 where the window mean is 0."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    out = np.zeros(n, dtype=np.float64)
    half = window // 2

    def fill(idx_lo: int, idx_hi: int) -> None:
        for i in range(idx_lo, idx_hi):
            w = values[max(0, i - half):min(n, i + half + 1)]
            mean = w.sum() / w.size
            if mean != 0.0:
                out[i] = math.sqrt(float(((w - mean) ** 2).sum()) / w.size) / mean

    if n < window:
        fill(0, n)
        return out
    # edges: truncated windows
    fill(0, half)
    fill(n - half, n)
    views = np.lib.stride_tricks.sliding_window_view(values, window)
    for lo in range(0, views.shape[0], chunk):
        w = views[lo:lo + chunk]
        mean = w.sum(axis=1) / window
        var = ((w - mean[:, None]) ** 2).sum(axis=1) / window
        with np.errstate(divide="ignore", invalid="ignore"):
            cv = np.where(mean != 0.0, np.sqrt(var) / mean, 0.0)
        out[half + lo:half + lo + w.shape[0]] = cv
    return out
