"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``FGSF_PURE_PYTHON=1`` to force the fallback.
"""

import os

from fgsf import _kernels_py

if os.environ.get("FGSF_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from fgsf import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

NAME = "compiled" if _impl is not _kernels_py else "python"
matmul = _impl.matmul
matmul_tn = _impl.matmul_tn
