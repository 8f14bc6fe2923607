"""Kernel backend selection.

The hot numeric loops (warping, photometric loss gradient, per-pixel decay
fitting) exist twice: a numba ``@njit`` build and a pure-numpy build with
identical semantics.  ``FLIMREG_KERNELS`` picks the backend:

  * unset or ``auto``  - numba when importable, numpy otherwise
  * ``numba``          - require numba, fail loudly if missing
  * ``numpy``          - force the pure-numpy path

``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import np_backend

_requested = os.environ.get("FLIMREG_KERNELS", "auto").strip().lower() or "auto"

if _requested == "numpy":
    _active = np_backend
    BACKEND = "numpy"
elif _requested in ("auto", "numba"):
    try:
        from . import nb_backend
        _active = nb_backend
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _active = np_backend
        BACKEND = "numpy"
else:
    raise ValueError(
        f"FLIMREG_KERNELS must be 'auto', 'numba' or 'numpy', got {_requested!r}")

warp_pull = _active.warp_pull
loss_grad = _active.loss_grad
fit_decay = _active.fit_decay
fit_plane = _active.fit_plane


def get_backend(name: str):
    """Return a backend module by name (for benchmarks and parity tests)."""
    if name == "numpy":
        return np_backend
    if name == "numba":
        from . import nb_backend
        return nb_backend
    raise ValueError(name)
