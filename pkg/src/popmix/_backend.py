"""Stepping-kernel backend selection.

The compiled extension is preferred when importable; set POPMIX_PURE_PYTHON=1
to force the numpy fallback (used by the cross-validation tests and the
benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("POPMIX_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from . import _step_kernel as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

BACKEND = kernels.BACKEND_NAME


def get_kernels(force_pure: bool = False):
    return _kernels_py if force_pure else kernels
