import gzip
import hashlib
import json
import re
import shutil

import pytest

from flowreport.cli import main
from flowreport.config import Config
from flowreport.report import strip_metadata
from flowreport.stages import STAGE_ORDER, STAGES, Stage
from flowreport.synth import ScenarioSpec


@pytest.fixture(scope="module")
def reports(small_dataset, tmp_path_factory):
    root, _ = small_dataset
    base = tmp_path_factory.mktemp("reports")
    codes = {}
    for policy in ("sequential", "smart"):
        codes[policy] = main(["report", str(root), "--out", str(base / policy), "--schedule", policy])
    return base, codes


def test_report_exit_and_sections(reports):
    base, codes = reports
    assert codes == {"sequential": 0, "smart": 0}
    text = (base / "sequential" / "report.md").read_text()
    titles = re.findall(r"^## (.+)$", text, re.M)
    assert titles == [STAGES[n].title for n in STAGE_ORDER]
    assert (base / "sequential" / "schedule_stats.csv").is_file()
    assert list((base / "sequential" / "charts").glob("*.svg"))
    assert list((base / "sequential" / "charts").glob("*.gp"))


def test_smart_and_sequential_bodies_identical(reports):
    base, _ = reports
    a = strip_metadata((base / "sequential" / "report.md").read_text())
    b = strip_metadata((base / "smart" / "report.md").read_text())
    assert a == b
    for sub in ("tables", "charts", "data"):
        fa = sorted(p.name for p in (base / "sequential" / sub).iterdir())
        fb = sorted(p.name for p in (base / "smart" / sub).iterdir())
        assert fa == fb
        for name in fa:
            assert (base / "sequential" / sub / name).read_bytes() == (base / "smart" / sub / name).read_bytes()


def test_missing_dataset_is_fatal(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["report", str(tmp_path / "nope"), "--out", str(out)]) == 1
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []
    assert "not found" in capsys.readouterr().err


def test_refuses_foreign_output_dir(small_dataset, tmp_path, capsys):
    root, _ = small_dataset
    out = tmp_path / "out"
    out.mkdir()
    (out / "thesis.tex").write_text("precious")
    assert main(["report", str(root), "--out", str(out)]) == 1
    assert (out / "thesis.tex").read_text() == "precious"


def test_rerun_replaces_previous_report(small_dataset, tmp_path):
    root, _ = small_dataset
    out = tmp_path / "out"
    assert main(["report", str(root), "--out", str(out), "--no-gnuplot"]) == 0
    assert not list((out / "charts").glob("*.gp"))
    (out / "stale.txt").write_text("x")
    assert main(["report", str(root), "--out", str(out), "--format", "latex"]) == 0
    assert not (out / "stale.txt").exists()
    assert (out / "report.tex").is_file() and not (out / "report.md").exists()
    assert [p.name for p in tmp_path.iterdir()] == ["out"]


def test_text_format_goes_to_stdout(small_dataset, tmp_path, capsys):
    root, _ = small_dataset
    assert main(["report", str(root), "--out", str(tmp_path / "o"), "--format", "text"]) == 0
    out = capsys.readouterr().out
    assert out == (tmp_path / "o" / "report.txt").read_text()
    assert "Traffic bursts" in out


def test_partial_failure_exit_code(small_dataset, tmp_path, monkeypatch, capsys):
    root, _ = small_dataset

    def boom(ctx):
        raise ValueError("no luck")

    monkeypatch.setitem(STAGES, "dns", Stage("dns", "DNS transactions", ("dns",), 1.5, boom))
    assert main(["report", str(root), "--out", str(tmp_path / "o"), "--schedule", "smart"]) == 3
    err = capsys.readouterr().err
    assert "section dns failed: ValueError: no luck" in err
    text = (tmp_path / "o" / "report.md").read_text()
    assert "This section failed to build" in text
    assert "## HTTP transactions" in text and "## ICMP messages" in text


def test_burst_threshold_flag(small_dataset, tmp_path):
    root, _ = small_dataset
    assert main(["report", str(root), "--out", str(tmp_path / "o"), "--burst-threshold", "1e12"]) == 0
    rows = (tmp_path / "o" / "tables" / "bursts_accepted.csv").read_text().splitlines()
    assert len(rows) == 1  # header only


def test_config_file_and_dump(tmp_path, capsys):
    conf = tmp_path / "my.conf"
    conf.write_text("report.top_n = 3\nrag.tcp.cet.score = 40\n")
    assert main(["config", "--config", str(conf)]) == 0
    dumped = capsys.readouterr().out
    cfg = Config.from_text(dumped)
    assert cfg["report.top_n"] == 3 and cfg["rag.tcp.cet.score"] == 40.0
    assert cfg == Config.load(conf)


def test_bad_config_is_fatal(small_dataset, tmp_path, capsys):
    root, _ = small_dataset
    conf = tmp_path / "bad.conf"
    conf.write_text("report.top_n = -3\n")
    assert main(["report", str(root), "--out", str(tmp_path / "o"), "--config", str(conf)]) == 1
    assert "report.top_n" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def _digests(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_synth_valid_and_rerun_identical(tmp_path):
    spec = ScenarioSpec(seed=5, duration=60.0, rates={"tcp": 3, "udp": 3, "http": 2, "dns": 2, "icmp": 1})
    path = tmp_path / "spec.json"
    path.write_text(spec.to_json())
    assert main(["synth", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", str(path), "--out", str(tmp_path / "b")]) == 0
    assert _digests(tmp_path / "a") == _digests(tmp_path / "b")


def test_synth_invalid_names_field(tmp_path, capsys):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"duration": 60, "anomalies": [{"kind": "dns_error_server",
                                                                "server": "10.0.2.1", "error_pct": -4}]}))
    assert main(["synth", str(path), "--out", str(tmp_path / "a")]) == 1
    err = capsys.readouterr().err
    assert "invalid scenario" in err and "error_pct" in err


def test_bench_row_counts(tcp_dir, capsys):
    root, cols, _ = tcp_dir
    assert main(["bench", str(root)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("kernels: ")
    row = out[2].split()
    assert row[0] == "tcp" and int(row[1]) == len(cols["ts_start"])
    assert int(row[2]) == (root / "tcp.records").stat().st_size


def test_bench_empty_dataset(tmp_path, capsys):
    assert main(["bench", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2  # backend line and header


def test_bench_gz_equals_plain(tcp_dir, tmp_path, capsys):
    root, _, _ = tcp_dir
    gz = tmp_path / "gz"
    gz.mkdir()
    with open(root / "tcp.records", "rb") as src, gzip.open(gz / "tcp.records.gz", "wb") as dst:
        shutil.copyfileobj(src, dst)
    main(["bench", str(root)])
    plain = capsys.readouterr().out.splitlines()[2].split()
    main(["bench", str(gz)])
    packed = capsys.readouterr().out.splitlines()[2].split()
    assert plain[1] == packed[1]


def test_bench_missing_dataset(tmp_path):
    assert main(["bench", str(tmp_path / "nope")]) == 1


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "flowreport", "config"], capture_output=True, text=True)
    assert r.returncode == 0
    assert Config.from_text(r.stdout) == Config()
