"""Pick the compiled kernels when available, else the numpy fallback.

Set ``FWL_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pycore

if os.environ.get("FWL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pycore
    NAME = "python"
else:
    try:
        from . import _core as _impl
        NAME = "cython"
    except ImportError:
        _impl = _pycore
        NAME = "python"

cholesky_lower = _impl.cholesky_lower
solve_lower = _impl.solve_lower
solve_lower_t = _impl.solve_lower_t
pairwise_sqdist = _impl.pairwise_sqdist
nearest_centroid = _impl.nearest_centroid
adam_update = _impl.adam_update
