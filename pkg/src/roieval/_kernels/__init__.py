"""Hot kernels: compiled extension when built, pure Python otherwise.

Set ``ROIEVAL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("ROIEVAL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _ext as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _fallback

BACKEND = "compiled" if _impl is not _fallback else "python"

solve_min_cost = _impl.solve_min_cost
lcs_length = _impl.lcs_length
fnv1a64 = _impl.fnv1a64

__all__ = ["BACKEND", "solve_min_cost", "lcs_length", "fnv1a64"]
