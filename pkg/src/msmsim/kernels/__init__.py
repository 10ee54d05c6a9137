"""Segment integral kernels with a compiled core and a numpy fallback.

The compiled extension ``_core`` is used when it was built; otherwise (or
when ``MSMSIM_PURE_PYTHON=1`` is set) the numpy implementation is used.
``BACKEND`` names the active choice.
"""

import os

from . import _fallback

if os.environ.get("MSMSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

segment_log_integrals = _impl.segment_log_integrals
galerkin_log_matrix = _impl.galerkin_log_matrix

__all__ = ["BACKEND", "segment_log_integrals", "galerkin_log_matrix", "_fallback"]
