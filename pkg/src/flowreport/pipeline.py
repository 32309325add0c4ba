"""open dataset -> plan -> execute -> merge -> render, into an atomic output tree."""

from __future__ import annotations

import os
import shutil
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__, kernels
from .config import Config
from .recordio import open_dataset
from .report import FORMATS, ReportSection, render
from .scheduler import StagePlan, StageRunStats, build_plan, execute_plan, merge_staging
from .stages import STAGE_ORDER

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 3


class OutputExistsError(RuntimeError):
    pass


@dataclass
class ReportResult:
    out_dir: Path
    plan: StagePlan
    sections: list[ReportSection]
    stats: StageRunStats
    files: list[str]
    wall_s: float
    fmt: str = "markdown"

    @property
    def status(self) -> int:
        return EXIT_PARTIAL if self.stats.failed else EXIT_OK

    @property
    def parse_fraction(self) -> float:
        return self.stats.parse_s / self.wall_s if self.wall_s > 0 else 0.0

    @property
    def report_path(self) -> Path:
        return self.out_dir / FORMATS[self.fmt]


def _looks_like_report(path: Path) -> bool:
    names = {p.name for p in path.iterdir()}
    return not names or bool(names & (set(FORMATS.values()) | {"schedule_stats.csv"}))


def run_report(dataset_path: str | Path, out_dir: str | Path, config: Mapping | None = None,
               stages: Sequence[str] | None = None) -> ReportResult:
    """Build the full report under ``out_dir``.

    Work happens in a hidden sibling directory renamed into place at the
    end, so a fatal error leaves no partial tree. An existing ``out_dir``
    is replaced only when it is empty or holds a previous report.
    """
    cfg = config if config is not None else Config()
    t0 = time.perf_counter()
    out = Path(out_dir)
    if out.exists() and (not out.is_dir() or not _looks_like_report(out)):
        raise OutputExistsError(f"{out} exists and does not look like a flowreport output directory")
    ds = open_dataset(dataset_path, cfg)
    fmt = cfg["report.format"]
    plan = build_plan(stages or STAGE_ORDER, cfg["schedule.policy"], cfg["schedule.heavy_stages"], ds)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.partial-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        staging = tmp / ".staging"
        sections, stats = execute_plan(plan, ds, cfg, staging)
        merge_staging(staging, tmp, plan.stages())
        shutil.rmtree(staging)
        stats.write_csv(tmp / "schedule_stats.csv")
        meta = {
            "generated_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "dataset": str(Path(dataset_path).resolve()),
            "schedule": plan.policy,
            "lanes": " | ".join(",".join(lane) for lane in plan.lanes),
            "makespan_s": f"{stats.makespan_s:.3f}",
            "aggregate_peak_mem_bytes": stats.aggregate_peak_mem_bytes,
            "parse_s": f"{stats.parse_s:.3f}",
            "kernels": kernels.BACKEND,
            "version": __version__,
        }
        files = render(sections, fmt, tmp, meta, bool(cfg["report.gnuplot"]))
        files.append("schedule_stats.csv")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return ReportResult(out, plan, sections, stats, sorted(files), time.perf_counter() - t0, fmt)
