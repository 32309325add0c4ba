import os
import time
from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowreport.config import Config
from flowreport.report import ReportSection, Text
from flowreport.scheduler import (
    POLICIES,
    ScheduleError,
    StagePlan,
    build_plan,
    execute_plan,
    merge_staging,
)
from flowreport.stages import STAGE_ORDER, STAGES, Stage


def test_sequential_single_lane_canonical():
    plan = build_plan(["topology", "tcp", "mac"], "sequential")
    assert plan.lanes == (("mac", "tcp", "topology"),)


def test_parallel_one_lane_each():
    plan = build_plan(STAGE_ORDER, "parallel")
    assert plan.lanes == tuple((s,) for s in STAGE_ORDER)


def test_smart_heavy_lane_first():
    plan = build_plan(STAGE_ORDER, "smart", heavy=["tcp", "bursts"])
    assert len(plan.lanes) == 2
    # without a dataset the cost factor decides: tcp 3.0 > bursts 2.0
    assert plan.lanes[0] == ("tcp", "bursts")
    assert plan.lanes[1] == ("mac", "ip", "udp", "http", "dns", "icmp", "topology")


def test_smart_orders_heavy_by_input_size():
    # bursts reads ip+tcp+udp+..., so with a large ip file it outranks tcp
    ds = SimpleNamespace(manifest={"ip": SimpleNamespace(size=10_000), "tcp": SimpleNamespace(size=100)})
    plan = build_plan(STAGE_ORDER, "smart", heavy=["tcp", "bursts"], dataset=ds)
    assert plan.lanes[0] == ("bursts", "tcp")


def test_plan_errors():
    with pytest.raises(ScheduleError):
        build_plan(STAGE_ORDER, "random")
    with pytest.raises(ScheduleError):
        build_plan(["nope"], "sequential")
    with pytest.raises(ScheduleError):
        build_plan([], "sequential")
    with pytest.raises(ScheduleError):
        build_plan(["tcp", "tcp"], "parallel")


@settings(max_examples=60, deadline=None)
@given(st.sets(st.sampled_from(STAGE_ORDER), min_size=1), st.sampled_from(POLICIES),
       st.sets(st.sampled_from(STAGE_ORDER)))
def test_plan_invariants(stages, policy, heavy):
    plan = build_plan(sorted(stages), policy, heavy=sorted(heavy))
    flat = plan.stages()
    assert sorted(flat) == sorted(stages)
    assert len(flat) == len(set(flat))
    for s in stages:
        assert s in plan.lanes[plan.lane_of(s)]
    if policy == "smart":
        assert len(plan.lanes) == 2
        assert set(plan.lanes[0]) == stages & heavy
        assert list(plan.lanes[1]) == sorted(plan.lanes[1], key=STAGE_ORDER.index)
    if policy == "sequential":
        assert list(flat) == sorted(stages, key=STAGE_ORDER.index)


def _body(sections):
    return [s.to_json() for s in sections]


@pytest.fixture(scope="module")
def runs(small_dataset, tmp_path_factory):
    root, _ = small_dataset
    out = {}
    for policy in POLICIES:
        plan = build_plan(STAGE_ORDER, policy)
        staging = tmp_path_factory.mktemp(f"staging-{policy}")
        sections, stats = execute_plan(plan, root, Config(), staging)
        out[policy] = (plan, sections, stats, staging)
    return out


def test_sections_in_canonical_order(runs):
    for plan, sections, stats, _ in runs.values():
        assert [s.name for s in sections] == list(STAGE_ORDER)
        assert not stats.failed, {n: stats.stages[n].error for n in stats.failed}


def test_policies_give_identical_sections(runs):
    bodies = {p: _body(r[1]) for p, r in runs.items()}
    assert bodies["sequential"] == bodies["parallel"] == bodies["smart"]


def test_policies_give_identical_figure_data(runs, tmp_path):
    merged = {}
    for policy, (plan, _, _, staging) in runs.items():
        dest = tmp_path / policy
        files = merge_staging(staging, dest, plan.stages())
        merged[policy] = {f: (dest / f).read_bytes() for f in files}
    assert merged["sequential"] == merged["parallel"] == merged["smart"]
    assert merged["sequential"]


def test_stats_accounting(runs):
    for plan, _, stats, _ in runs.values():
        assert len(stats.lane_makespan_s) == len(plan.lanes)
        for i, lane in enumerate(plan.lanes):
            assert stats.lane_wall_s[i] == pytest.approx(sum(stats.stages[n].wall_s for n in lane))
            # a lane lasts at least as long as the stages it ran back to back
            assert stats.lane_makespan_s[i] >= stats.lane_wall_s[i] - 1e-6
        assert stats.makespan_s >= max(stats.lane_makespan_s) - 1e-6
        assert stats.makespan_s >= max(s.wall_s for s in stats.stages.values())
        for s in stats.stages.values():
            assert s.peak_mem_bytes > 0
            assert s.wall_s > 0
        assert stats.aggregate_peak_mem_bytes > 0


def test_each_file_parsed_once_per_lane(runs):
    _, _, stats, _ = runs["sequential"]
    rows = sum(s.rows_consumed for s in stats.stages.values())
    _, _, stats_p, _ = runs["parallel"]
    rows_p = sum(s.rows_consumed for s in stats_p.stages.values())
    # one lane parses every file once; per-stage lanes re-read shared inputs
    assert 0 < rows < rows_p


def test_stats_csv(runs, tmp_path):
    _, _, stats, _ = runs["smart"]
    path = stats.write_csv(tmp_path / "s.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "stage,lane,wall_s,peak_mem_bytes"
    assert [l.split(",")[0] for l in lines[1:]] == list(STAGE_ORDER)


def test_single_stage_makespan_close_to_wall(small_dataset, tmp_path):
    root, _ = small_dataset
    plan = build_plan(["ip"], "sequential")
    _, stats = execute_plan(plan, root, Config(), tmp_path)
    st_ = stats.stages["ip"]
    assert stats.makespan_s >= st_.wall_s
    # process start-up and join are the only overhead
    assert stats.makespan_s - st_.wall_s < 2.0


def _boom(ctx):
    raise RuntimeError("planted failure")


def _die(ctx):
    os._exit(17)


def _sleepy(ctx):
    time.sleep(0.2)
    return ReportSection(ctx.stage, "Sleepy", [Text("slept")])


@pytest.mark.parametrize("policy", POLICIES)
def test_failing_stage_is_isolated(small_dataset, tmp_path, monkeypatch, policy):
    root, _ = small_dataset
    monkeypatch.setitem(STAGES, "udp", Stage("udp", "UDP conversations", ("udp",), 1.0, _boom))
    plan = build_plan(STAGE_ORDER, policy)
    sections, stats = execute_plan(plan, root, Config(), tmp_path)
    assert stats.failed == ["udp"]
    by = {s.name: s for s in sections}
    assert by["udp"].error == "RuntimeError: planted failure"
    assert (tmp_path / "udp" / "traceback.txt").read_text().count("planted failure") >= 1
    assert all(by[n].error is None for n in STAGE_ORDER if n != "udp")


def test_dead_lane_yields_error_sections(small_dataset, tmp_path, monkeypatch):
    root, _ = small_dataset
    monkeypatch.setitem(STAGES, "icmp", Stage("icmp", "ICMP messages", ("icmp",), 1.0, _die))
    plan = StagePlan("smart", (("tcp",), ("mac", "icmp", "topology")))
    sections, stats = execute_plan(plan, root, Config(), tmp_path)
    by = {s.name: s for s in sections}
    assert [s.name for s in sections] == ["mac", "tcp", "icmp", "topology"]
    assert by["mac"].error is None and by["tcp"].error is None
    # the lane died inside icmp, so topology never ran either
    assert "code 17" in by["icmp"].error
    assert "code 17" in by["topology"].error
    assert sorted(stats.failed) == ["icmp", "topology"]


def test_memory_charged_to_running_stage(small_dataset, tmp_path, monkeypatch):
    root, _ = small_dataset
    monkeypatch.setitem(STAGES, "mac", Stage("mac", "Sleepy", (), 1.0, _sleepy))
    plan = build_plan(["mac"], "sequential")
    sections, stats = execute_plan(plan, root, Config().replace(schedule__sample_hz=50), tmp_path)
    assert sections[0].items[0].text == "slept"
    assert stats.stages["mac"].wall_s >= 0.2
    assert stats.stages["mac"].peak_mem_bytes > 10 * 2**20
