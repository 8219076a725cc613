"""Kernel backend selection.

Prefers the compiled Cython extension; falls back to the NumPy
implementation when the extension is missing or when
``HDINFER_FORCE_NUMPY_KERNELS=1`` is set (used by the benchmark and the
backend-equivalence tests).
"""

import os

if os.environ.get("HDINFER_FORCE_NUMPY_KERNELS") == "1":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _cd as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import numpy_backend as _impl

        BACKEND = "numpy"

lasso_cd = _impl.lasso_cd
qp_cd = _impl.qp_cd

__all__ = ["BACKEND", "lasso_cd", "qp_cd"]
