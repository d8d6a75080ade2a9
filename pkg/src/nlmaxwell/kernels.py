"""Backend selection for the pointwise nonlinearity kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used.  Setting ``NLMAXWELL_PURE_PYTHON=1`` forces the
numpy path.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
pointwise = _pykernels.pointwise

if os.environ.get("NLMAXWELL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _ck  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _ck = None
    if _ck is not None:
        BACKEND = "compiled"
        pointwise = _ck.pointwise

__all__ = ["BACKEND", "pointwise"]
