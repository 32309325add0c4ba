"""Compiled and pure kernels must agree bit for bit."""

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowreport import _pure, kernels

native = kernels.native
needs_native = pytest.mark.skipif(native is None, reason="compiled kernels not built")


def _same(a, b):
    ca, aa, na, sa, ea, la = a
    cb, ab, nb, sb, eb, lb = b
    assert (na, sa, ea, la) == (nb, sb, eb, lb)
    assert len(ca) == len(cb)
    for x, y in zip(ca, cb):
        if x is None:
            assert y is None
            continue
        assert x.dtype == y.dtype
        if x.dtype == object:
            assert x.tolist() == y.tolist()
        else:
            assert np.array_equal(x, y)
    for x, y in zip(aa, ab):
        assert (x is None and y is None) or np.array_equal(x, y)


def _both(buf, kinds, skip_bad=False, offset=1):
    return native.parse_block(buf, kinds, skip_bad, offset), _pure.parse_block(buf, kinds, skip_bad, offset)


decimals = st.builds(
    lambda sign, whole, frac: f"{sign}{whole}" + (f".{frac}" if frac is not None else ""),
    st.sampled_from(["", "-", "+"]),
    st.integers(0, 10**17),
    st.one_of(st.none(), st.text("0123456789", min_size=1, max_size=24)),
)


@needs_native
@settings(max_examples=400)
@given(st.lists(decimals, min_size=1, max_size=20))
def test_fast_float_matches_strtod(texts):
    buf = ("\n".join(texts) + "\n").encode()
    cols, absent, n, *_ = native.parse_block(buf, b"f", False, 1)
    assert n == len(texts)
    assert cols[0].tolist() == [float(t) for t in texts]


@needs_native
@settings(max_examples=200)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_float_repr_round_trip(values):
    buf = "".join(f"{v!r}\n" for v in values).encode()
    cols, *_ = native.parse_block(buf, b"f", False, 1)
    assert cols[0].tolist() == values


cell = st.one_of(
    st.just(""),
    st.integers(-2**63, 2**63 - 1).map(str),
    st.integers(2**63, 2**70).map(str),
    st.floats(allow_nan=False, allow_infinity=False).map(repr),
    decimals,
    st.sampled_from(["nan", "inf", "1e400", " 3", "4 ", "1_0", "0x10", "abc", "-", ".", "1.", ".5", "1e5"]),
    st.text(st.characters(blacklist_characters="\t\n\r", blacklist_categories=("Cs",)), max_size=8),
)


@needs_native
@settings(max_examples=300, deadline=None)
@given(st.text("ifsx", min_size=1, max_size=5), st.data(), st.booleans())
def test_parse_block_parity(kinds, data, skip_bad):
    rows = data.draw(st.lists(st.lists(cell, min_size=len(kinds), max_size=len(kinds)), max_size=12))
    extra = data.draw(st.sampled_from(["", "\n", "a\tb\tc\td\te\tf\n"]))
    buf = ("".join("\t".join(r) + "\n" for r in rows) + extra).encode()
    a, b = _both(buf, kinds.encode(), skip_bad, 7)
    _same(a, b)


@needs_native
@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=200))
def test_parse_block_parity_raw_bytes(raw):
    buf = raw + b"\n" if raw else b""
    for kinds in (b"s", b"is", b"fsi"):
        for skip in (False, True):
            _same(*_both(buf, kinds, skip))


@needs_native
def test_interning_many_distinct_strings():
    # more distinct values than the intern table holds
    vals = [f"10.{i // 65536}.{(i // 256) % 256}.{i % 256}" for i in range(10_000)]
    vals = vals + vals[::-1]
    buf = "".join(f"{v}\n" for v in vals).encode()
    cols, *_ = native.parse_block(buf, b"s", False, 1)
    assert cols[0].tolist() == vals
    # repeated values share one object while the table has room
    small = native.parse_block(b"a\nb\na\n", b"s", False, 1)[0][0]
    assert small[0] is small[2]


@needs_native
def test_non_ascii_strings():
    buf = "héllo\n日本\nhéllo\n".encode()
    _same(*_both(buf, b"s"))
    bad = b"\xff\xfe\n"
    _same(*_both(bad, b"s"))
    _same(*_both(bad, b"s", True))


@needs_native
def test_text_arrays_release_references():
    buf = b"host-a\nhost-b\nhost-a\n" * 1000
    cols, *_ = native.parse_block(buf, b"s", False, 1)
    s = cols[0][0]
    assert sys.getrefcount(s) > 1000
    del cols
    # only the local name and the call argument remain
    assert sys.getrefcount(s) == 2


@needs_native
@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 30), st.integers(0, 10**9)), max_size=40),
       st.sampled_from([0.1, 1.0, 2.5]))
def test_reconstruct_parity(flows, res):
    s = np.array([f[0] for f in flows], dtype=np.float64)
    e = s + np.array([f[1] for f in flows], dtype=np.float64)
    b = np.array([f[2] for f in flows], dtype=np.float64)
    nbins = int(np.ceil(130 / res))
    x = native.reconstruct(s, e, b, 0.0, res, nbins)
    y = _pure.reconstruct(s, e, b, 0.0, res, nbins)
    np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-6)


@needs_native
@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e9), max_size=80), st.sampled_from([1, 3, 5, 11, 301]))
def test_rolling_cv_parity(values, window):
    v = np.array(values, dtype=np.float64)
    np.testing.assert_allclose(native.rolling_cv(v, window), _pure.rolling_cv(v, window, chunk=7),
                               rtol=1e-7, atol=1e-9)


def test_backend_env_switch():
    code = "from flowreport import kernels; print(kernels.BACKEND)"
    forced = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                            env={"FLOWREPORT_PURE": "1", "PATH": ""})
    assert forced.stdout.strip() == "pure"
    default = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert default.stdout.strip() == ("native" if native is not None else "pure")


def test_kernels_expose_one_backend():
    assert kernels.BACKEND in ("native", "pure")
    impl = native if kernels.BACKEND == "native" else _pure
    assert kernels.parse_block is impl.parse_block


@needs_native
def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_backends.py"
    spec = importlib.util.spec_from_file_location("bench_backends", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    assert mod.main(["--rows", "2000", "--repeat", "1"]) == 0
    out = capsys.readouterr().out
    for name in ("parse_block", "reconstruct", "rolling_cv", "full scan"):
        assert name in out
