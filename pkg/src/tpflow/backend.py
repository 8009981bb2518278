"""Kernel backend selection.

``TPF_BACKEND=numba`` (default) uses the jitted kernels; ``TPF_BACKEND=numpy``
forces the pure-numpy fallback.  If numba is not importable the fallback is
used automatically.  ``benchmarks/bench_backends.py`` compares the two.
"""

import os

_requested = os.environ.get("TPF_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"TPF_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import _kernels_numpy as _impl
else:
    try:
        from . import _kernels_numba as _impl
    except ImportError:
        if _requested == "numba":
            raise
        from . import _kernels_numpy as _impl

BACKEND = _impl.NAME
apply_lap = _impl.apply_lap
cg = _impl.cg
