"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when the
``DPCS_PURE_PYTHON`` environment variable is set to a non-empty value other
than ``0``, the numpy fallback is used.
"""
from __future__ import annotations

import os

from . import _kernels_py

_force_py = os.environ.get("DPCS_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

allocate = _impl.allocate
mlp_forward_vec = _impl.mlp_forward_vec

__all__ = ["BACKEND", "allocate", "mlp_forward_vec", "_kernels_py"]
