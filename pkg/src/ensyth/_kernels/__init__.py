"""Numeric kernel dispatch: compiled fast path with pure-Python fallback.

Both backends implement the same fixed-order arithmetic (products and
partial sums rounded identically), so a package built without a C
toolchain produces bit-identical numbers, just slower.  Selection happens
once at import; set ``ENSYTH_KERNELS=python`` or ``compiled`` to force a
backend (``auto`` is the default).
"""

import os

import numpy as np

from . import _pykernels

_requested = os.environ.get("ENSYTH_KERNELS", "auto").lower()
if _requested not in {"auto", "python", "compiled"}:
    raise RuntimeError(
        f"ENSYTH_KERNELS must be 'auto', 'python' or 'compiled', got {_requested!r}"
    )

_impl = None
if _requested in {"auto", "compiled"}:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "compiled":
            raise RuntimeError(
                "ENSYTH_KERNELS=compiled but the extension is not built"
            ) from None
if _impl is None:
    _impl = _pykernels

BACKEND = "python" if _impl is _pykernels else "compiled"


def _as_matrix(a):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"kernel operand must be 2-D, got ndim={arr.ndim}")
    return arr


def matmul(a, b):
    """Fixed-summation-order matrix product of two 2-D float64 arrays."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return _impl.matmul(a, b)


def relu(a):
    """Elementwise max(x, 0) on a 2-D float64 array."""
    return _impl.relu(_as_matrix(a))
