"""Kernel backend selection.

The compiled ``_native`` extension is used when it was built; otherwise the
numpy implementation in ``_pure`` is used. Set ``FLOWREPORT_PURE=1`` to force
the fallback (the benchmark and the parity tests do this).
"""

import os

from . import _pure

native = None
if os.environ.get("FLOWREPORT_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _native as native
    except ImportError:
        native = None

_impl = native if native is not None else _pure
BACKEND = "native" if native is not None else "pure"

parse_block = _impl.parse_block
reconstruct = _impl.reconstruct
rolling_cv = _impl.rolling_cv

__all__ = ["BACKEND", "parse_block", "reconstruct", "rolling_cv", "native"]
