"""Numba acceleration switch.

Hot kernels (splat compositing, heightfield ray casting) ship in two
variants: an @njit implementation and a pure-numpy twin.  The numba path is
used when numba imports cleanly and the environment variable
``SKYSPLAT_DISABLE_NUMBA`` is unset/0.  Both paths compute the same values;
``benchmarks/bench_kernels.py`` compares their throughput.
"""

import os

try:
    import numba  # noqa: F401
    _NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    _NUMBA_AVAILABLE = False


def numba_enabled() -> bool:
    if not _NUMBA_AVAILABLE:
        return False
    flag = os.environ.get("SKYSPLAT_DISABLE_NUMBA", "0").strip().lower()
    return flag in ("", "0", "false", "no")
