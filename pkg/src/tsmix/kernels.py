"""Row-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Set ``TSMIX_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("TSMIX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
log_softmax_rows = _impl.log_softmax_rows
layer_norm_rows = _impl.layer_norm_rows
layer_norm_rows_backward = _impl.layer_norm_rows_backward

__all__ = [
    "BACKEND",
    "softmax_rows",
    "softmax_rows_backward",
    "log_softmax_rows",
    "layer_norm_rows",
    "layer_norm_rows_backward",
]
