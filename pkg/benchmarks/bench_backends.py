"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_backends.py [--rows N] [--repeat K]

Times each kernel on the same input under both backends, then a full scan
of a generated TCP file through ``scan_stats`` in a subprocess per backend
(the backend is chosen at import, so the scan needs a fresh interpreter).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import random_tcp_columns  # noqa: E402

from flowreport import _pure, kernels  # noqa: E402
from flowreport.recordio import write_columns  # noqa: E402
from flowreport.records import SCHEMAS  # noqa: E402

SCAN = """
import json, sys
from flowreport import kernels
from flowreport.recordio import open_dataset, scan_stats
s = scan_stats(open_dataset(sys.argv[1]), "tcp")
print(json.dumps({"backend": kernels.BACKEND, "rows": s.row_count, "bytes": s.byte_count, "seconds": s.seconds}))
"""


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def scan(root: Path, pure: bool) -> dict:
    env = dict(os.environ)
    if pure:
        env["FLOWREPORT_PURE"] = "1"
    else:
        env.pop("FLOWREPORT_PURE", None)
    out = subprocess.run([sys.executable, "-c", SCAN, str(root)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if kernels.native is None:
        print("compiled kernels not built; nothing to compare", file=sys.stderr)
        return 1
    native = kernels.native

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        cols, absent = random_tcp_columns(args.rows, seed=11)
        write_columns(root / "tcp.records", "tcp", cols, absent)
        raw = (root / "tcp.records").read_bytes()
        body = raw[raw.index(b"\n") + 1:]
        kinds = "".join(k for _, k in SCHEMAS["tcp"]).encode()

        rng = np.random.default_rng(3)
        starts = np.sort(rng.uniform(0, 3600, args.rows))
        ends = starts + rng.exponential(5.0, args.rows)
        nbytes = rng.integers(100, 10**7, args.rows).astype(np.float64)
        nbins = 3700
        series = rng.uniform(0, 1e9, 86_400)

        cases = [
            ("parse_block", lambda m: m.parse_block(body, kinds, False, 2), f"{args.rows} rows, {len(body) / 1e6:.1f} MB"),
            ("reconstruct", lambda m: m.reconstruct(starts, ends, nbytes, 0.0, 1.0, nbins), f"{args.rows} flows"),
            ("rolling_cv", lambda m: m.rolling_cv(series, 301), "86400 bins, window 301"),
        ]
        print(f"{'kernel':<14}{'native s':>10}{'pure s':>10}{'speed-up':>10}  input")
        for name, fn, what in cases:
            tn = best_of(lambda: fn(native), args.repeat)
            tp = best_of(lambda: fn(_pure), max(1, args.repeat - 1))
            print(f"{name:<14}{tn:>10.3f}{tp:>10.3f}{tp / tn:>9.1f}x  {what}")

        a, b = scan(root, False), scan(root, True)
        assert a["rows"] == b["rows"] == args.rows
        print()
        print(f"{'full scan':<14}{a['seconds']:>10.3f}{b['seconds']:>10.3f}{b['seconds'] / a['seconds']:>9.1f}x  "
              f"{a['rows']} rows, {a['rows'] / a['seconds'] / 1e6:.2f} vs {b['rows'] / b['seconds'] / 1e6:.2f} Mrows/s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
