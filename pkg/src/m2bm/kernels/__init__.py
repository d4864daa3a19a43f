"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

The backend is chosen once at import. Set ``M2BM_KERNEL_BACKEND=python`` to
force the numpy fallback (useful for benchmarking and for debugging the
compiled kernels, whose outputs must agree to ~1e-12 relative).
"""

from __future__ import annotations

import os

from . import _reference

_requested = os.environ.get("M2BM_KERNEL_BACKEND", "").lower()

if _requested in ("python", "numpy", "py"):
    _impl = _reference
    BACKEND = "python"
elif _requested in ("compiled", "cython", "c"):
    from . import _fcpkern as _impl  # hard failure wanted when forced

    BACKEND = "compiled"
else:
    try:
        from . import _fcpkern as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _reference
        BACKEND = "python"

if BACKEND == "compiled":
    import numpy as _np

    def _coerce(arr, dtype):
        # the extension's typed memoryviews need contiguous, writable buffers
        out = _np.ascontiguousarray(arr, dtype=dtype)
        if not out.flags.writeable:
            out = out.copy()
        return out

    def accumulate_normal_equations(stacked, target, inv_w):
        return _impl.accumulate_normal_equations(
            _coerce(stacked, _np.complex128),
            _coerce(target, _np.complex128),
            _coerce(inv_w, _np.float64),
        )

    def accumulate_stack_cotangent(stacked, target, inv_w, mat, vec):
        return _impl.accumulate_stack_cotangent(
            _coerce(stacked, _np.complex128),
            _coerce(target, _np.complex128),
            _coerce(inv_w, _np.float64),
            _coerce(mat, _np.complex128),
            _coerce(vec, _np.complex128),
        )

    accumulate_normal_equations.__doc__ = _impl.accumulate_normal_equations.__doc__
    accumulate_stack_cotangent.__doc__ = _impl.accumulate_stack_cotangent.__doc__
else:
    accumulate_normal_equations = _impl.accumulate_normal_equations
    accumulate_stack_cotangent = _impl.accumulate_stack_cotangent

__all__ = ["BACKEND", "accumulate_normal_equations", "accumulate_stack_cotangent"]
