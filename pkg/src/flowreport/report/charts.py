"""Standalone SVG charts (and matching gnuplot scripts) drawn from data CSVs."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .model import CHART_COLUMNS, ChartSpec

W, H = 720, 380
ML, MR, MT, MB = 78, 24, 20, 56
PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
           "#9c755f", "#bab0ac")


class ChartDataError(ValueError):
    pass


def read_chart_data(spec: ChartSpec, root: str | Path) -> dict[str, list[str]]:
    path = Path(root) / spec.data
    if not path.is_file():
        raise ChartDataError(f"chart {spec.name}: data source {spec.data} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ChartDataError(f"chart {spec.name}: data source {spec.data} has no header")
    header = rows[0]
    missing = [c for c in CHART_COLUMNS[spec.kind] if c not in header]
    if missing:
        raise ChartDataError(f"chart {spec.name}: data source lacks column(s) {missing}")
    return {c: [r[header.index(c)] for r in rows[1:]] for c in header}


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return []
    if hi <= lo:
        hi = lo + (abs(lo) or 1.0)
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _tick_label(v: float) -> str:
    a = abs(v)
    for div, suffix in ((1e12, "T"), (1e9, "G"), (1e6, "M"), (1e3, "k")):
        if a >= div:
            return f"{v / div:g}{suffix}"
    return f"{v:g}"


class _Canvas:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            f'font-family="sans-serif" font-size="11">',
            f"<title>{escape(title)}</title>",
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
        ]

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, anchor="middle", extra=""):
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>')

    def done(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Axes:
    """Linear (or log10) mapping of data coordinates onto the plot area."""

    def __init__(self, xlo, xhi, ylo, yhi, log_x=False):
        self.log_x = log_x
        if log_x:
            xlo, xhi = math.log10(xlo), math.log10(xhi)
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            yhi = ylo + (abs(ylo) or 1.0)
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v):
        if self.log_x:
            v = math.log10(v)
        return ML + (v - self.xlo) / (self.xhi - self.xlo) * (W - ML - MR)

    def y(self, v):
        return H - MB - (v - self.ylo) / (self.yhi - self.ylo) * (H - MT - MB)

    def draw(self, c: _Canvas, x_label: str, y_label: str, x_ticks=True):
        c.add(f'<g class="axes" stroke="#333333" stroke-width="1">'
              f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}"/>'
              f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}"/></g>')
        for t in nice_ticks(self.ylo, self.yhi):
            y = self.y(t)
            c.add(f'<line x1="{ML - 4}" y1="{_f(y)}" x2="{ML}" y2="{_f(y)}" stroke="#333333"/>')
            c.text(ML - 6, y + 4, _tick_label(t), "end")
        if x_ticks:
            if self.log_x:
                ticks = [10.0 ** e for e in range(math.ceil(self.xlo), math.floor(self.xhi) + 1)]
            else:
                ticks = nice_ticks(self.xlo, self.xhi)
            for t in ticks:
                x = self.x(t)
                c.add(f'<line x1="{_f(x)}" y1="{H - MB}" x2="{_f(x)}" y2="{H - MB + 4}" stroke="#333333"/>')
                c.text(x, H - MB + 16, _tick_label(t))
        c.text((ML + W - MR) / 2, H - 12, x_label)
        c.text(16, (MT + H - MB) / 2, y_label, extra=f' transform="rotate(-90 16 {_f((MT + H - MB) / 2)})"')


def _no_data(spec: ChartSpec) -> str:
    c = _Canvas(spec.name)
    c.add(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="#999999"/>')
    c.text(W / 2, H / 2, "no data", extra=' class="no-data" font-size="16" fill="#666666"')
    return c.done()


def _timeseries(spec, data) -> str:
    t = np.array([float(v) for v in data["timestamp"]])
    v = np.array([float(x) for x in data["value"]])
    base = float(t[0])
    rel = t - base
    step = float(rel[1] - rel[0]) if len(rel) > 1 else 1.0
    ax = _Axes(0.0, float(rel[-1] + step), 0.0, float(v.max()) * 1.05 if v.max() > 0 else 1.0)
    c = _Canvas(spec.name)
    for a, b in spec.highlights:
        lo, hi = max(a - base, 0.0), min(b - base, rel[-1] + step)
        if hi <= lo:
            continue
        x0, x1 = ax.x(lo), ax.x(hi)
        c.add(f'<rect class="burst" x="{_f(x0)}" y="{MT}" width="{_f(x1 - x0)}" height="{H - MT - MB}" '
              f'fill="#ffd700" fill-opacity="0.45"/>')
    pts = " ".join(f"{_f(ax.x(x))},{_f(ax.y(y))}" for x, y in zip(rel.tolist(), v.tolist()))
    c.add(f'<polyline class="series" fill="none" stroke="{PALETTE[0]}" stroke-width="1" points="{pts}"/>')
    ax.draw(c, spec.x_label or "seconds since start", spec.y_label)
    return c.done()


def box_stats(values: np.ndarray) -> dict[str, float]:
    """Quartiles (linear interpolation) and 1.5-IQR whiskers clipped to the data."""
    q1, med, q3 = (float(x) for x in np.percentile(values, [25, 50, 75]))
    iqr = q3 - q1
    lo = float(values[values >= q1 - 1.5 * iqr].min())
    hi = float(values[values <= q3 + 1.5 * iqr].max())
    return {"q1": q1, "median": med, "q3": q3, "lo": lo, "hi": hi}


def _groups(data) -> dict[str, np.ndarray]:
    out: dict[str, list[float]] = {}
    for g, v in zip(data["group"], data["value"]):
        out.setdefault(g, []).append(float(v))
    return {g: np.array(v) for g, v in out.items()}


def _boxplot(spec, data) -> str:
    groups = _groups(data)
    stats = {g: box_stats(v) for g, v in groups.items()}
    ymax = max(s["hi"] for s in stats.values())
    ymin = min(0.0, min(s["lo"] for s in stats.values()))
    ax = _Axes(0.0, float(len(groups)), ymin, ymax * 1.05 if ymax > 0 else 1.0)
    c = _Canvas(spec.name)
    bw = (W - ML - MR) / len(groups) * 0.5
    for i, (g, s) in enumerate(stats.items()):
        cx = ax.x(i + 0.5)
        c.add(f'<g class="box" stroke="#333333">'
              f'<line x1="{_f(cx)}" y1="{_f(ax.y(s["lo"]))}" x2="{_f(cx)}" y2="{_f(ax.y(s["q1"]))}"/>'
              f'<line x1="{_f(cx)}" y1="{_f(ax.y(s["q3"]))}" x2="{_f(cx)}" y2="{_f(ax.y(s["hi"]))}"/>'
              f'<rect x="{_f(cx - bw / 2)}" y="{_f(ax.y(s["q3"]))}" width="{_f(bw)}" '
              f'height="{_f(ax.y(s["q1"]) - ax.y(s["q3"]))}" fill="{PALETTE[i % len(PALETTE)]}" fill-opacity="0.6"/>'
              f'<line class="median" x1="{_f(cx - bw / 2)}" y1="{_f(ax.y(s["median"]))}" '
              f'x2="{_f(cx + bw / 2)}" y2="{_f(ax.y(s["median"]))}" stroke-width="2"/></g>')
        c.text(cx, H - MB + 16, g, extra=' font-size="9"')
    ax.draw(c, spec.x_label, spec.y_label, x_ticks=False)
    return c.done()


def _pie(spec, data) -> str:
    labels = data["label"]
    values = np.array([float(v) for v in data["value"]])
    keep = values > 0
    labels = [l for l, k in zip(labels, keep) if k]
    values = values[keep]
    c = _Canvas(spec.name)
    if not len(values):
        return _no_data(spec)
    cx, cy, r = 200.0, H / 2, 140.0
    total = float(values.sum())
    if len(values) == 1:
        c.add(f'<circle class="wedge" cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" fill="{PALETTE[0]}"/>')
    else:
        angle = -math.pi / 2
        for i, v in enumerate(values.tolist()):
            sweep = 2 * math.pi * v / total
            a1 = angle + sweep
            x0, y0 = cx + r * math.cos(angle), cy + r * math.sin(angle)
            x1, y1 = cx + r * math.cos(a1), cy + r * math.sin(a1)
            large = 1 if sweep > math.pi else 0
            c.add(f'<path class="wedge" d="M{_f(cx)},{_f(cy)} L{_f(x0)},{_f(y0)} '
                  f'A{_f(r)},{_f(r)} 0 {large} 1 {_f(x1)},{_f(y1)} Z" fill="{PALETTE[i % len(PALETTE)]}" '
                  f'stroke="#ffffff"/>')
            angle = a1
    for i, (l, v) in enumerate(zip(labels, values.tolist())):
        y = 40 + i * 18
        c.add(f'<rect x="400" y="{y - 10}" width="12" height="12" fill="{PALETTE[i % len(PALETTE)]}"/>')
        c.text(418, y, f"{l} ({100 * v / total:.1f}%)", "start")
    return c.done()


def eccdf(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted values x and P(X > x)."""
    x = np.sort(values)
    uniq, idx = np.unique(x, return_index=True)
    n = len(x)
    counts_le = np.append(idx[1:], n)
    return uniq, 1.0 - counts_le / n


def _survival(spec, data) -> str:
    v = np.array([float(x) for x in data["value"]])
    if spec.log_x:
        v = v[v > 0]
        if not len(v):
            return _no_data(spec)
    x, p = eccdf(v)
    lo, hi = float(x[0]), float(x[-1])
    if spec.log_x and hi <= lo:
        hi = lo * 10
    ax = _Axes(lo, hi, 0.0, 1.0, log_x=spec.log_x)
    c = _Canvas(spec.name)
    pts = []
    prev = 1.0
    for xi, pi in zip(x.tolist(), p.tolist()):
        pts.append(f"{_f(ax.x(xi))},{_f(ax.y(prev))}")
        pts.append(f"{_f(ax.x(xi))},{_f(ax.y(pi))}")
        prev = pi
    c.add(f'<polyline class="survival" fill="none" stroke="{PALETTE[0]}" stroke-width="1.5" points="{" ".join(pts)}"/>')
    ax.draw(c, spec.x_label, spec.y_label or "P(X > x)")
    return c.done()


def _topology(spec, data) -> str:
    edges = [(s, t, float(w)) for s, t, w in zip(data["source"], data["target"], data["weight"])]
    nodes = sorted({s for s, _, _ in edges} | {t for _, t, _ in edges})
    c = _Canvas(spec.name)
    cx, cy, r = W / 2, H / 2, min(W, H) / 2 - 50
    pos = {}
    for i, n in enumerate(nodes):
        a = 2 * math.pi * i / len(nodes) - math.pi / 2
        pos[n] = (cx + r * math.cos(a), cy + r * math.sin(a))
    wmax = max(w for _, _, w in edges) or 1.0
    for s, t, w in edges:
        (x0, y0), (x1, y1) = pos[s], pos[t]
        c.add(f'<line class="edge" x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y1)}" '
              f'stroke="#888888" stroke-width="{_f(0.5 + 5.5 * w / wmax)}"/>')
    for n in nodes:
        x, y = pos[n]
        c.add(f'<circle class="node" cx="{_f(x)}" cy="{_f(y)}" r="6" fill="{PALETTE[0]}"/>')
        c.text(x, y - 10, n, extra=' font-size="9"')
    return c.done()


_RENDERERS = {
    "timeseries_line": _timeseries,
    "boxplot": _boxplot,
    "pie": _pie,
    "survival_distribution": _survival,
    "topology_graph": _topology,
}


def render_chart(spec: ChartSpec, root: str | Path) -> str:
    """SVG document for ``spec``; data is read from ``root / spec.data``."""
    data = read_chart_data(spec, root)
    first = CHART_COLUMNS[spec.kind][0]
    if not data[first]:
        return _no_data(spec)
    return _RENDERERS[spec.kind](spec, data)


def gnuplot_script(spec: ChartSpec, root: str | Path | None = None) -> str:
    """A gnuplot script producing a similar chart; paths relative to ``charts/``.

    Survival charts embed their step points (computed from the data under
    ``root``) since gnuplot has no complementary-CDF smoothing.
    """
    src = "../" + spec.data
    lines = [
        "set terminal svg size 720,380",
        f"set output '{spec.name}.gp.svg'",
        "set datafile separator ','",
        f"set xlabel '{spec.x_label}'",
        f"set ylabel '{spec.y_label}'",
        "set key off",
    ]
    if spec.kind == "timeseries_line":
        for i, (a, b) in enumerate(spec.highlights, 1):
            lines.append(f"set object {i} rect from {a!r},graph 0 to {b!r},graph 1 fc rgb '#ffd700' fs solid 0.45 behind")
        lines.append(f"plot '{src}' using 1:2 every ::1 with lines")
    elif spec.kind == "boxplot":
        lines.append("set style data boxplot")
        lines.append(f"plot '{src}' using (1):2:(0):1 every ::1")
    elif spec.kind == "pie":
        lines.append("# gnuplot has no pie primitive; bars of the same shares")
        lines.append("set style fill solid")
        lines.append(f"plot '{src}' using 0:2:xtic(1) every ::1 with boxes")
    elif spec.kind == "survival_distribution":
        if spec.log_x:
            lines.append("set logscale x")
        v = np.zeros(0)
        if root is not None:
            v = np.array([float(x) for x in read_chart_data(spec, root)["value"]])
            if spec.log_x:
                v = v[v > 0]
        lines.append("$eccdf << EOD")
        if len(v):
            for xi, pi in zip(*(a.tolist() for a in eccdf(v))):
                lines.append(f"{xi!r} {pi!r}")
        lines.append("EOD")
        lines.append("plot $eccdf using 1:2 with steps")
    else:
        lines.append(f"plot '{src}' using 0:3:xtic(sprintf('%s-%s', stringcolumn(1), stringcolumn(2))) every ::1 with boxes")
    return "\n".join(lines) + "\n"
