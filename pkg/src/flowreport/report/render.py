"""Render report sections to Markdown, LaTeX source or console text."""

from __future__ import annotations

import csv
import io
import re
from pathlib import Path
from typing import Mapping, Sequence

from .charts import gnuplot_script, render_chart
from .model import Figure, ReportSection, Table, Text, format_cell

FORMATS = {"markdown": "report.md", "latex": "report.tex", "text": "report.txt"}
META_BEGIN = "flowreport:meta begin"
META_END = "flowreport:meta end"
RAG_COLORS = {"red": "ragred", "amber": "ragamber", "green": "raggreen"}


class RenderError(RuntimeError):
    pass


def strip_metadata(text: str) -> str:
    """Drop the metadata header block (the only non-deterministic content)."""
    out, skipping = [], False
    for line in text.splitlines(keepends=True):
        if META_BEGIN in line:
            skipping = True
        if not skipping:
            out.append(line)
        if skipping and META_END in line:
            skipping = False
    return "".join(out)


def _meta_lines(metadata: Mapping[str, object]) -> list[str]:
    return [f"{k}: {metadata[k]}" for k in sorted(metadata)]


def _csv_text(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# markdown


def _md_cell(v) -> str:
    return format_cell(v).replace("|", "\\|").replace("\n", " ")


def _markdown(sections, metadata) -> str:
    lines = [f"<!-- {META_BEGIN}"] + _meta_lines(metadata) + [f"{META_END} -->", "", "# Traffic report", ""]
    for s in sections:
        lines += [f"## {s.title}", ""]
        for it in s.items:
            if isinstance(it, Text):
                lines += [it.text, ""]
            elif isinstance(it, Table):
                lines += [f"**{it.title}**", ""]
                if not it.rows:
                    lines += ["*(empty)*", ""]
                    continue
                lines.append("| " + " | ".join(_md_cell(c) for c in it.columns) + " |")
                lines.append("|" + "|".join("---" for _ in it.columns) + "|")
                for r in it.rows:
                    lines.append("| " + " | ".join(_md_cell(v) for v in r) + " |")
                lines.append("")
                if it.name:
                    lines += [f"Data: [tables/{it.name}.csv](tables/{it.name}.csv)", ""]
            elif isinstance(it, Figure):
                lines += [f"![{it.title}](charts/{it.chart.name}.svg)", ""]
    return "\n".join(lines).rstrip("\n") + "\n"


# latex

_TEX_ESCAPES = {"\\": r"\textbackslash{}", "&": r"\&", "%": r"\%", "$": r"\$", "#": r"\#", "_": r"\_",
                "{": r"\{", "}": r"\}", "~": r"\textasciitilde{}", "^": r"\textasciicircum{}"}
_TEX_RE = re.compile("|".join(re.escape(k) for k in _TEX_ESCAPES))


def tex_escape(s: str) -> str:
    return _TEX_RE.sub(lambda m: _TEX_ESCAPES[m.group(0)], s)


def _latex(sections, metadata) -> str:
    lines = [f"% {META_BEGIN}"] + [f"% {l}" for l in _meta_lines(metadata)] + [f"% {META_END}"]
    lines += [
        r"\documentclass[a4paper,10pt]{article}",
        r"\usepackage[table]{xcolor}",
        r"\usepackage{longtable}",
        r"\usepackage{svg}",
        r"\usepackage[margin=2cm]{geometry}",
        r"\definecolor{ragred}{HTML}{F4A6A6}",
        r"\definecolor{ragamber}{HTML}{F9D77E}",
        r"\definecolor{raggreen}{HTML}{B5DDA4}",
        r"\title{Traffic report}",
        r"\date{}",
        r"\begin{document}",
        r"\maketitle",
        "",
    ]
    for s in sections:
        lines += [rf"\section{{{tex_escape(s.title)}}}", ""]
        for it in s.items:
            if isinstance(it, Text):
                lines += [tex_escape(it.text), ""]
            elif isinstance(it, Table):
                if not it.rows:
                    lines += [rf"\paragraph{{{tex_escape(it.title)}}} (empty)", ""]
                    continue
                spec = "l" * len(it.columns)
                lines += [rf"\begin{{longtable}}{{{spec}}}", rf"\caption{{{tex_escape(it.title)}}}\\",
                          r"\hline", " & ".join(rf"\textbf{{{tex_escape(c)}}}" for c in it.columns) + r" \\",
                          r"\hline"]
                for i, r in enumerate(it.rows):
                    cells = [tex_escape(format_cell(v)) for v in r]
                    color = it.row_colors[i] if it.row_colors else None
                    if color in RAG_COLORS:
                        cells[0] = rf"\cellcolor{{{RAG_COLORS[color]}}}" + cells[0]
                    lines.append(" & ".join(cells) + r" \\")
                lines += [r"\hline", r"\end{longtable}", ""]
            elif isinstance(it, Figure):
                lines += [r"\begin{figure}[ht]", r"\centering",
                          rf"\includesvg[width=\linewidth]{{charts/{it.chart.name}}}",
                          rf"\caption{{{tex_escape(it.title)}}}", r"\end{figure}", ""]
    lines.append(r"\end{document}")
    return "\n".join(lines) + "\n"


# plain text


def _text_table(t: Table) -> list[str]:
    cells = [[format_cell(c) for c in t.columns]] + [[format_cell(v) for v in r] for r in t.rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(t.columns))]
    out = ["  ".join(c.ljust(w) for c, w in zip(cells[0], widths)).rstrip(),
           "  ".join("-" * w for w in widths)]
    for i, row in enumerate(cells[1:]):
        line = "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
        color = t.row_colors[i] if t.row_colors else None
        out.append(f"{line}  [{color.upper()}]" if color in ("red", "amber") else line)
    return out


def _text(sections, metadata) -> str:
    lines = [f"## {META_BEGIN}"] + [f"## {l}" for l in _meta_lines(metadata)] + [f"## {META_END}",
                                                                                 "TRAFFIC REPORT", ""]
    for s in sections:
        lines += ["=" * 72, s.title, "=" * 72, ""]
        for it in s.items:
            if isinstance(it, Text):
                lines += [it.text, ""]
            elif isinstance(it, Table):
                lines += [it.title, ""]
                lines += (_text_table(it) if it.rows else ["(empty)"]) + [""]
            elif isinstance(it, Figure):
                lines += [f"[figure] {it.title}: charts/{it.chart.name}.svg", ""]
    return "\n".join(lines).rstrip("\n") + "\n"


_RENDERERS = {"markdown": _markdown, "latex": _latex, "text": _text}


def render(sections: Sequence[ReportSection], fmt: str, out_dir: str | Path,
           metadata: Mapping[str, object] | None = None, gnuplot: bool = False) -> list[str]:
    """Write the report, its charts and its tables under ``out_dir``.

    Figure data CSVs must already sit under ``out_dir`` at the paths their
    chart specs name. Returns the sorted relative paths of written files.
    """
    if fmt not in FORMATS:
        raise RenderError(f"unknown format {fmt!r}; expected one of {sorted(FORMATS)}")
    out = Path(out_dir)
    try:
        (out / "charts").mkdir(parents=True, exist_ok=True)
        (out / "tables").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RenderError(f"cannot write to {out}: {exc}") from exc
    written = []
    names: set[str] = set()
    for s in sections:
        for it in s.items:
            if isinstance(it, Table) and it.name:
                if it.name in names:
                    raise RenderError(f"duplicate table name {it.name!r}")
                names.add(it.name)
                path = out / "tables" / f"{it.name}.csv"
                path.write_text(_csv_text(it.columns, it.rows), encoding="utf-8")
                written.append(path)
            elif isinstance(it, Figure):
                spec = it.chart
                if f"chart:{spec.name}" in names:
                    raise RenderError(f"duplicate chart name {spec.name!r}")
                names.add(f"chart:{spec.name}")
                svg = out / "charts" / f"{spec.name}.svg"
                svg.write_text(render_chart(spec, out), encoding="utf-8")
                written.append(svg)
                if gnuplot:
                    gp = out / "charts" / f"{spec.name}.gp"
                    gp.write_text(gnuplot_script(spec, out), encoding="utf-8")
                    written.append(gp)
    report = out / FORMATS[fmt]
    report.write_text(_RENDERERS[fmt](sections, dict(metadata or {})), encoding="utf-8")
    written.append(report)
    return sorted(str(p.relative_to(out)) for p in written)


_REF_RE = re.compile(r"(charts/[\w.-]+?\.svg|tables/[\w.-]+?\.csv|charts/[\w-]+(?=\}))")


def dangling_references(out_dir: str | Path, sections: Sequence[ReportSection] | None = None,
                        fmt: str = "markdown") -> list[str]:
    """Paths referenced by the report (and by figure specs) that do not exist."""
    out = Path(out_dir)
    text = (out / FORMATS[fmt]).read_text(encoding="utf-8")
    missing = []
    for ref in sorted(set(_REF_RE.findall(text))):
        path = out / ref
        if not path.suffix:
            path = path.with_suffix(".svg")
        if not path.is_file():
            missing.append(ref)
    for s in sections or ():
        for f in s.figures():
            if not (out / f.chart.data).is_file():
                missing.append(f.chart.data)
    return missing
