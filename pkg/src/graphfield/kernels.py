"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
module is used. Set ``GRAPHFIELD_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("GRAPHFIELD_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _kernels_py as _impl

        BACKEND = "python"

etree = _impl.etree
colcounts = _impl.colcounts
chol_numeric = _impl.chol_numeric
lsolve = _impl.lsolve
ltsolve = _impl.ltsolve
takahashi = _impl.takahashi

__all__ = ["BACKEND", "etree", "colcounts", "chol_numeric", "lsolve", "ltsolve", "takahashi"]
