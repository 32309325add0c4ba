"""Report content model: sections holding tables, figures and paragraphs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

CHART_KINDS = ("timeseries_line", "boxplot", "pie", "survival_distribution", "topology_graph")

# columns each chart kind needs in its data CSV
CHART_COLUMNS = {
    "timeseries_line": ("timestamp", "value"),
    "boxplot": ("group", "value"),
    "pie": ("label", "value"),
    "survival_distribution": ("value",),
    "topology_graph": ("source", "target", "weight"),
}


@dataclass(frozen=True)
class ChartSpec:
    """``data`` is the path of the data CSV relative to the output root."""

    kind: str
    name: str
    data: str
    x_label: str = ""
    y_label: str = ""
    highlights: tuple[tuple[float, float], ...] = ()
    log_x: bool = False

    def __post_init__(self):
        if self.kind not in CHART_KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if not self.name.replace("_", "").replace("-", "").isalnum():
            raise ValueError(f"chart name {self.name!r} must be alphanumeric (plus _ and -)")
        if self.highlights and self.kind != "timeseries_line":
            raise ValueError("only timeseries charts take highlight intervals")
        object.__setattr__(self, "highlights", tuple((float(a), float(b)) for a, b in self.highlights))


@dataclass(frozen=True)
class Table:
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    name: str = ""
    row_colors: tuple = ()  # per row: "red" / "amber" / "green" / None

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        object.__setattr__(self, "row_colors", tuple(self.row_colors))
        for i, r in enumerate(self.rows):
            if len(r) != len(self.columns):
                raise ValueError(f"table {self.title!r}: row {i} has {len(r)} cells, header has {len(self.columns)}")
        if self.row_colors and len(self.row_colors) != len(self.rows):
            raise ValueError(f"table {self.title!r}: row_colors length differs from rows")


@dataclass(frozen=True)
class Figure:
    title: str
    chart: ChartSpec


@dataclass(frozen=True)
class Text:
    text: str


Item = Table | Figure | Text


@dataclass
class ReportSection:
    name: str
    title: str
    items: list = field(default_factory=list)
    error: str | None = None

    def add(self, item) -> "ReportSection":
        self.items.append(item)
        return self

    def tables(self) -> list[Table]:
        return [i for i in self.items if isinstance(i, Table)]

    def figures(self) -> list[Figure]:
        return [i for i in self.items if isinstance(i, Figure)]

    def to_dict(self) -> dict:
        items = []
        for it in self.items:
            d = asdict(it)
            d["type"] = type(it).__name__.lower()
            items.append(d)
        return {"name": self.name, "title": self.title, "error": self.error, "items": items}

    @classmethod
    def from_dict(cls, d: dict) -> "ReportSection":
        items = []
        for it in d["items"]:
            it = dict(it)
            kind = it.pop("type")
            if kind == "table":
                items.append(Table(**it))
            elif kind == "figure":
                c = dict(it["chart"])
                c["highlights"] = tuple(tuple(h) for h in c.get("highlights", ()))
                items.append(Figure(it["title"], ChartSpec(**c)))
            elif kind == "text":
                items.append(Text(**it))
            else:
                raise ValueError(f"unknown item type {kind!r}")
        return cls(d["name"], d["title"], items, d.get("error"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ReportSection":
        return cls.from_dict(json.loads(text))


def error_section(name: str, title: str, message: str) -> ReportSection:
    return ReportSection(name, title, [Text(f"This section failed to build: {message}")], error=message)


def format_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if v != v:
            return ""
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return f"{v:.4g}" if abs(v) < 1e-3 or abs(v) >= 1e6 else f"{v:.3f}".rstrip("0").rstrip(".")
    return str(v)


def table_from_rows(title: str, columns: Sequence[str], rows: Sequence[Sequence], name: str = "",
                    row_colors: Sequence = ()) -> Table:
    return Table(title, tuple(columns), tuple(tuple(r) for r in rows), name, tuple(row_colors))
