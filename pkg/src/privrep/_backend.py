"""Kernel backend selection.

The per-client kernels in :mod:`privrep.kernels` ship in two flavours: a
numba ``@njit`` version and a pure-numpy version. Set ``PRIVREP_NUMBA=0``
before import to force the numpy path (handy for debugging and for
platforms without numba).
"""

import os

_FLAG = os.environ.get("PRIVREP_NUMBA", "1").strip().lower()

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "false", "no", "off")


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
