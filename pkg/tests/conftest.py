import numpy as np
import pytest

from flowreport.recordio import write_columns


def random_tcp_columns(n, seed=0, t_span=600.0, servers=8, clients=40):
    rng = np.random.default_rng(seed)
    start = np.sort(rng.uniform(0, t_span, n))
    dur = rng.exponential(3.0, n)
    pkts_s2d = rng.integers(1, 200, n)
    pkts_d2s = rng.integers(1, 200, n)
    cet = rng.uniform(0.001, 0.05, n)
    cet_absent = rng.random(n) < 0.1
    return {
        "ts_start": start,
        "ts_end": start + dur,
        "src_ip": np.array([f"10.1.0.{i}" for i in rng.integers(1, clients + 1, n)], dtype=object),
        "dst_ip": np.array([f"10.0.0.{i}" for i in rng.integers(1, servers + 1, n)], dtype=object),
        "src_port": rng.integers(1024, 65535, n),
        "dst_port": rng.choice([80, 443, 22, 8080], n),
        "pkts_s2d": pkts_s2d,
        "pkts_d2s": pkts_d2s,
        "bytes_s2d": pkts_s2d * rng.integers(60, 1500, n),
        "bytes_d2s": pkts_d2s * rng.integers(60, 1500, n),
        "data_pkts_s2d": pkts_s2d // 2,
        "data_pkts_d2s": pkts_d2s // 2,
        "syn_count": np.ones(n, dtype=np.int64),
        "synack_count": np.ones(n, dtype=np.int64),
        "ignored_syns": rng.integers(0, 2, n),
        "retx_s2d": rng.binomial(pkts_s2d, 0.02),
        "retx_d2s": rng.binomial(pkts_d2s, 0.02),
        "dupack_s2d": rng.binomial(pkts_s2d, 0.01),
        "dupack_d2s": rng.binomial(pkts_d2s, 0.01),
        "zwin_s2d": np.zeros(n, dtype=np.int64),
        "zwin_d2s": rng.binomial(pkts_d2s, 0.005),
        "cet_s": cet,
        "rtt_s": cet / 2,
    }, {"cet_s": cet_absent, "rtt_s": cet_absent}


@pytest.fixture
def tcp_dir(tmp_path):
    cols, absent = random_tcp_columns(1000, seed=1)
    write_columns(tmp_path / "tcp.records", "tcp", cols, absent)
    return tmp_path, cols, absent


@pytest.fixture(params=["native", "pure"])
def backend(request, monkeypatch):
    """Runs a test once per kernel backend."""
    from flowreport import _pure, kernels

    if request.param == "native":
        if kernels.native is None:
            pytest.skip("compiled kernels not built")
        impl = kernels.native
    else:
        impl = _pure
    for name in ("parse_block", "reconstruct", "rolling_cv"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture(scope="session")
def standard_dataset(tmp_path_factory):
    """The standard synthetic fixture, generated once per session."""
    from flowreport.synth import generate, standard_scenario

    out = tmp_path_factory.mktemp("standard")
    truth = generate(standard_scenario(), out)
    return out, truth


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A short, thin version of the standard scenario for end-to-end tests."""
    from flowreport.synth import generate, standard_scenario

    out = tmp_path_factory.mktemp("small")
    truth = generate(standard_scenario(duration=600.0, scale=0.1), out)
    return out, truth


# criterion number -> (passed, title, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
