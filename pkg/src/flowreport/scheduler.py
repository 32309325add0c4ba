"""Stage scheduling: plan lanes under a policy, run them, merge their output.

Each lane is a forked process running its stages in order against its own
:class:`~flowreport.stages.LaneData`, so a file is parsed at most once per
lane. Stages write ``section.json`` and their figure data into a private
staging directory; the parent merges those in canonical section order once
every lane has exited. The parent samples each lane's resident set size and
charges it to the stage the lane reported as running.
"""

from __future__ import annotations

import csv
import multiprocessing as mp
import os
import queue as queue_mod
import shutil
import tempfile
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import psutil

from .config import Config
from .recordio import Dataset, open_dataset
from .report import ReportSection, error_section
from .stages import STAGE_ORDER, STAGES, LaneData, Stage, StageContext

POLICIES = ("sequential", "parallel", "smart")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class StagePlan:
    policy: str
    lanes: tuple[tuple[str, ...], ...]

    def stages(self) -> list[str]:
        return [s for lane in self.lanes for s in lane]

    def lane_of(self, stage: str) -> int:
        for i, lane in enumerate(self.lanes):
            if stage in lane:
                return i
        raise KeyError(stage)


@dataclass
class StageStats:
    stage: str
    lane: int
    wall_s: float = 0.0
    peak_mem_bytes: int = 0
    rows_consumed: int = 0
    parse_s: float = 0.0
    ok: bool = False
    error: str | None = None


@dataclass
class StageRunStats:
    policy: str
    stages: dict[str, StageStats] = field(default_factory=dict)
    makespan_s: float = 0.0
    aggregate_peak_mem_bytes: int = 0
    lane_wall_s: list[float] = field(default_factory=list)  # sum of stage walls per lane
    lane_makespan_s: list[float] = field(default_factory=list)  # lane start to lane exit

    @property
    def failed(self) -> list[str]:
        return [s for s, st in self.stages.items() if not st.ok]

    @property
    def parse_s(self) -> float:
        return sum(st.parse_s for st in self.stages.values())

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "lane", "wall_s", "peak_mem_bytes"])
            for name in sorted(self.stages, key=_canonical_key):
                st = self.stages[name]
                w.writerow([name, st.lane, f"{st.wall_s:.6f}", st.peak_mem_bytes])
        return path


def _canonical_key(name: str):
    return (STAGE_ORDER.index(name) if name in STAGE_ORDER else len(STAGE_ORDER), name)


def _resolve(stages) -> list[Stage]:
    out = []
    for s in stages:
        if isinstance(s, Stage):
            out.append(s)
        elif s in STAGES:
            out.append(STAGES[s])
        else:
            raise ScheduleError(f"unknown stage {s!r}")
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise ScheduleError("stage names must be unique")
    return out


def build_plan(stages: Sequence[Stage | str], policy: str, heavy: Sequence[str] | None = None,
               dataset: Dataset | None = None) -> StagePlan:
    """Assign stages to lanes.

    sequential: one lane in canonical order. parallel: one lane per stage.
    smart: the heavy stages in lane 0, most expensive first, and every other
    stage in lane 1. Expected cost comes from input file sizes when a
    dataset is given, else from each stage's cost factor alone.
    """
    if policy not in POLICIES:
        raise ScheduleError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    resolved = sorted(_resolve(stages), key=lambda s: _canonical_key(s.name))
    if not resolved:
        raise ScheduleError("no stages to schedule")
    names = tuple(s.name for s in resolved)
    if policy == "sequential":
        return StagePlan(policy, (names,))
    if policy == "parallel":
        return StagePlan(policy, tuple((n,) for n in names))
    heavy_set = set(Config()["schedule.heavy_stages"] if heavy is None else heavy)
    hv = [s for s in resolved if s.name in heavy_set]
    hv.sort(key=lambda s: (-s.expected_cost(dataset), _canonical_key(s.name)))
    light = tuple(s.name for s in resolved if s.name not in heavy_set)
    return StagePlan(policy, (tuple(s.name for s in hv), light))


# lane process


def _write_section(staging: Path, section: ReportSection) -> None:
    staging.mkdir(parents=True, exist_ok=True)
    tmp = staging / "section.json.tmp"
    tmp.write_text(section.to_json(), encoding="utf-8")
    os.replace(tmp, staging / "section.json")


def _run_lane(lane: int, names: Sequence[str], root: str, config: Mapping, staging_root: str, q) -> None:
    proc = psutil.Process()
    try:
        data = LaneData(open_dataset(root, config))
    except Exception as exc:  # dataset vanished between open and fork
        for name in names:
            q.put(("end", lane, name, 0.0, 0, 0.0, False, f"{type(exc).__name__}: {exc}", 0))
        return
    for name in names:
        stage = STAGES[name]
        staging = Path(staging_root) / name
        q.put(("start", lane, name, time.time()))
        rows0, parse0 = data.rows_parsed(), data.parse_seconds()
        t = time.perf_counter()
        err = None
        try:
            section = stage.build(StageContext(data, config, staging, name))
        except Exception as exc:
            err = f"{type(exc).__name__}: {exc}"
            section = error_section(name, stage.title, err)
            tb = traceback.format_exc()
            staging.mkdir(parents=True, exist_ok=True)
            (staging / "traceback.txt").write_text(tb, encoding="utf-8")
        wall = time.perf_counter() - t
        _write_section(staging, section)
        rss = proc.memory_info().rss
        q.put(("end", lane, name, wall, data.rows_parsed() - rows0, data.parse_seconds() - parse0,
               err is None, err, rss))


def _lane_rss(p) -> int:
    try:
        return psutil.Process(p.pid).memory_info().rss
    except (psutil.NoSuchProcess, psutil.AccessDenied):
        return 0


def execute_plan(plan: StagePlan, dataset: Dataset | str | Path, config: Mapping | None = None,
                 staging_dir: str | Path | None = None) -> tuple[list[ReportSection], StageRunStats]:
    """Run every lane concurrently and return sections in canonical order.

    A stage that raises, or whose lane dies, yields an error section; the
    other stages still run. Figure data stay under ``staging_dir`` (a new
    temporary directory when not given) for :func:`merge_staging`.
    """
    cfg = config if config is not None else Config()
    root = str(dataset.root if isinstance(dataset, Dataset) else dataset)
    if staging_dir is None:
        staging_dir = tempfile.mkdtemp(prefix="flowreport-staging-")
    staging_root = Path(staging_dir)
    staging_root.mkdir(parents=True, exist_ok=True)
    period = 1.0 / float(cfg["schedule.sample_hz"])
    stats = StageRunStats(plan.policy)
    for i, lane in enumerate(plan.lanes):
        for name in lane:
            stats.stages[name] = StageStats(name, i)

    ctx = mp.get_context("fork")
    q = ctx.Queue()
    t_start = time.perf_counter()
    procs = [ctx.Process(target=_run_lane, args=(i, lane, root, cfg, str(staging_root), q), daemon=True)
             for i, lane in enumerate(plan.lanes)]
    for p in procs:
        p.start()
    running: dict[int, str | None] = {i: None for i in range(len(procs))}
    lane_done = [None] * len(procs)

    def handle(msg):
        if msg[0] == "start":
            _, lane, name, _ = msg
            running[lane] = name
        else:
            _, lane, name, wall, rows, parse_s, ok, err, rss = msg
            st = stats.stages[name]
            st.wall_s, st.rows_consumed, st.parse_s, st.ok, st.error = wall, rows, parse_s, ok, err
            st.peak_mem_bytes = max(st.peak_mem_bytes, rss)
            running[lane] = None

    def drain():
        while True:
            try:
                handle(q.get_nowait())
            except queue_mod.Empty:
                return

    while True:
        drain()
        alive = False
        total = 0
        for i, p in enumerate(procs):
            if p.is_alive():
                alive = True
                rss = _lane_rss(p)
                total += rss
                name = running[i]
                if name is not None:
                    st = stats.stages[name]
                    st.peak_mem_bytes = max(st.peak_mem_bytes, rss)
            elif lane_done[i] is None:
                lane_done[i] = time.perf_counter() - t_start
        stats.aggregate_peak_mem_bytes = max(stats.aggregate_peak_mem_bytes, total)
        if not alive:
            break
        time.sleep(period)
    for p in procs:
        p.join()
    # messages can trail the process exit
    deadline = time.monotonic() + 1.0
    while any(not st.ok and st.error is None for st in stats.stages.values()) and time.monotonic() < deadline:
        try:
            handle(q.get(timeout=0.05))
        except queue_mod.Empty:
            pass
    drain()
    stats.makespan_s = time.perf_counter() - t_start
    stats.lane_wall_s = [sum(stats.stages[n].wall_s for n in lane) for lane in plan.lanes]
    stats.lane_makespan_s = [d if d is not None else stats.makespan_s for d in lane_done]

    sections = []
    for name in sorted(plan.stages(), key=_canonical_key):
        st = stats.stages[name]
        path = staging_root / name / "section.json"
        if path.is_file():
            sections.append(ReportSection.from_json(path.read_text(encoding="utf-8")))
            if st.error is None and not st.ok:
                st.ok = True  # finished but the message was lost
        else:
            code = procs[st.lane].exitcode
            st.ok = False
            st.error = st.error or f"lane {st.lane} exited with code {code} before finishing this stage"
            sections.append(error_section(name, STAGES[name].title, st.error))
    return sections, stats


def merge_staging(staging_dir: str | Path, out_dir: str | Path, stages: Sequence[str]) -> list[str]:
    """Copy each stage's figure data into the output tree, in canonical order."""
    out = Path(out_dir)
    copied = []
    for name in sorted(stages, key=_canonical_key):
        src = Path(staging_dir) / name / "data"
        if not src.is_dir():
            continue
        for f in sorted(src.iterdir()):
            dest = out / "data" / f.name
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(f, dest)
            copied.append(str(dest.relative_to(out)))
    return copied
