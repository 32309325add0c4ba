"""Command-line entry point: ``flowreport {report,synth,bench,config}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import kernels
from .config import Config, ConfigError
from .pipeline import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, OutputExistsError, run_report
from .recordio import RecordIOError, open_dataset, scan_stats
from .report import FORMATS, RenderError
from .scheduler import POLICIES, ScheduleError
from .synth import ScenarioSpec, SpecError, generate, standard_scenario


def _error(msg: str) -> int:
    print(f"flowreport: error: {msg}", file=sys.stderr)
    return EXIT_FATAL


def load_config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    overrides = {}
    if getattr(args, "schedule", None):
        overrides["schedule.policy"] = args.schedule
    if getattr(args, "format", None):
        overrides["report.format"] = args.format
    if getattr(args, "skip_bad_rows", False):
        overrides["io.skip_bad_rows"] = True
    if getattr(args, "burst_threshold", None) is not None:
        overrides["burst.threshold_bps"] = args.burst_threshold
    if getattr(args, "no_gnuplot", False):
        overrides["report.gnuplot"] = False
    return cfg.replace(**{k.replace(".", "__"): v for k, v in overrides.items()}) if overrides else cfg


def cmd_report(args) -> int:
    try:
        cfg = load_config(args)
        result = run_report(args.dataset, args.out, cfg)
    except (ConfigError, RecordIOError, ScheduleError, RenderError, OutputExistsError, OSError) as exc:
        return _error(str(exc))
    st = result.stats
    if cfg["report.format"] == "text":
        sys.stdout.write(result.report_path.read_text(encoding="utf-8"))
    print(f"wrote {result.report_path} ({len(result.sections)} sections, schedule {st.policy}, "
          f"makespan {st.makespan_s:.2f} s, peak memory {st.aggregate_peak_mem_bytes / 2**20:.0f} MiB)",
          file=sys.stderr)
    for name in st.failed:
        print(f"flowreport: section {name} failed: {st.stages[name].error}", file=sys.stderr)
    return EXIT_PARTIAL if st.failed else EXIT_OK


def cmd_synth(args) -> int:
    try:
        if args.spec:
            spec = ScenarioSpec.load(args.spec)
        else:
            spec = standard_scenario(seed=args.seed, scale=args.scale)
        truth = generate(spec, args.out, compress=args.compress)
    except SpecError as exc:
        return _error(f"invalid scenario: {exc}")
    except (OSError, ValueError) as exc:
        return _error(str(exc))
    print(f"wrote {len(truth['files'])} record files and truth.json to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        ds = open_dataset(args.dataset, load_config(args))
        rows = [(p, scan_stats(ds, p)) for p in ds.protocols]
    except (ConfigError, RecordIOError, OSError) as exc:
        return _error(str(exc))
    print(f"kernels: {kernels.BACKEND}")
    header = f"{'protocol':<10}{'rows':>12}{'bytes':>14}{'seconds':>10}{'rows/s':>14}{'MB/s':>10}"
    print(header)
    for p, s in rows:
        secs = max(s.seconds, 1e-9)
        print(f"{p:<10}{s.row_count:>12}{s.byte_count:>14}{s.seconds:>10.3f}{s.row_count / secs:>14.0f}"
              f"{s.byte_count / secs / 1e6:>10.1f}")
    return EXIT_OK


def cmd_config(args) -> int:
    try:
        cfg = load_config(args)
    except (ConfigError, OSError) as exc:
        return _error(str(exc))
    sys.stdout.write(cfg.dump())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowreport", description="Traffic reports from enriched flow records.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("report", help="build a report from a record directory")
    r.add_argument("dataset", help="directory holding <protocol>.records[.gz] files")
    r.add_argument("--out", required=True, help="output directory (replaced atomically)")
    r.add_argument("--config", help="config file with dotted key = value lines")
    r.add_argument("--schedule", choices=POLICIES)
    r.add_argument("--format", choices=sorted(FORMATS))
    r.add_argument("--skip-bad-rows", action="store_true", help="count and drop malformed rows")
    r.add_argument("--burst-threshold", type=float, metavar="BPS", help="burst threshold in bits/s")
    r.add_argument("--no-gnuplot", action="store_true", help="do not write charts/*.gp")
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="generate a synthetic dataset with planted anomalies")
    s.add_argument("spec", nargs="?", help="scenario JSON; the standard scenario when omitted")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=7, help="seed of the standard scenario")
    s.add_argument("--scale", type=float, default=1.0, help="rate multiplier of the standard scenario")
    s.add_argument("--compress", action="store_true", help="write .records.gz files")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="parse every record file once and report throughput")
    b.add_argument("dataset")
    b.add_argument("--config")
    b.add_argument("--skip-bad-rows", action="store_true")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("config", help="print the effective configuration")
    c.add_argument("--config")
    c.set_defaults(func=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
