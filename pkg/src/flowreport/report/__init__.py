"""Report content model, chart drawing and output renderers."""

from .charts import ChartDataError, box_stats, eccdf, gnuplot_script, render_chart
from .model import (
    CHART_KINDS,
    ChartSpec,
    Figure,
    ReportSection,
    Table,
    Text,
    error_section,
    format_cell,
    table_from_rows,
)
from .render import FORMATS, RenderError, dangling_references, render, strip_metadata

__all__ = [
    "CHART_KINDS", "ChartDataError", "ChartSpec", "FORMATS", "Figure", "RenderError", "ReportSection", "Table",
    "Text", "box_stats", "dangling_references", "eccdf", "error_section", "format_cell", "gnuplot_script",
    "render", "render_chart", "strip_metadata", "table_from_rows",
]
