"""Kernel selection at import: compiled extension if built, numpy otherwise.

Set ``PSEUDOLIDAR_COR_PURE_PYTHON=1`` to force the numpy kernels.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("PSEUDOLIDAR_COR_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"
    else:
        BACKEND = "cython"


def select(name=None):
    """Kernel module for ``name`` ("cython", "python" or None for the default)."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        try:
            from . import _kernels
        except ImportError as exc:
            raise RuntimeError("compiled kernels are not built") from exc
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
