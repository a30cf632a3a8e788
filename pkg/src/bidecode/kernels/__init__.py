"""Kernel backend selection.

Imports the compiled core when available, unless BIDECODE_PURE_PYTHON=1
forces the numpy fallback. Both backends export the same functions and
produce identical float64 results.
"""

import os

from . import reference

if os.environ.get("BIDECODE_PURE_PYTHON") == "1":
    _impl = reference
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = reference

BACKEND = _impl.BACKEND

tanh_fwd = _impl.tanh_fwd
tanh_bwd = _impl.tanh_bwd
sigmoid_fwd = _impl.sigmoid_fwd
sigmoid_bwd = _impl.sigmoid_bwd
relu_fwd = _impl.relu_fwd
relu_bwd = _impl.relu_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
conv1d_same_fwd = _impl.conv1d_same_fwd
conv1d_same_bwd = _impl.conv1d_same_bwd
