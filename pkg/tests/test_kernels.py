"""Backend parity: the compiled and pure-Python kernels must agree bitwise."""

import numpy as np
import pytest

from ensyth import _kernels
from ensyth._kernels import _pykernels

from _oracles import naive_matmul

try:
    from ensyth._kernels import _ckernels
except ImportError:
    _ckernels = None

needs_compiled = pytest.mark.skipif(_ckernels is None,
                                    reason="compiled kernels not built")


def _random_pair(rng, m, k, n):
    return rng.normal(size=(m, k)), rng.normal(size=(k, n))


@needs_compiled
def test_matmul_backends_bitwise_equal():
    rng = np.random.default_rng(0)
    for m, k, n in [(1, 1, 1), (7, 5, 3), (13, 64, 9), (65, 200, 32), (3, 1000, 2)]:
        a, b = _random_pair(rng, m, k, n)
        compiled = _ckernels.matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))
        fallback = _pykernels.matmul(a, b)
        assert compiled.tobytes() == fallback.tobytes()


@needs_compiled
def test_relu_backends_bitwise_equal():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(40, 30))
    a[0, 0] = -0.0
    a[1, 1] = 0.0
    compiled = _ckernels.relu(np.ascontiguousarray(a))
    fallback = _pykernels.relu(a)
    assert compiled.tobytes() == fallback.tobytes()


def test_matmul_matches_triple_loop_bitwise():
    rng = np.random.default_rng(2)
    a, b = _random_pair(rng, 7, 5, 3)
    assert _kernels.matmul(a, b).tobytes() == naive_matmul(a, b).tobytes()


def test_python_fallback_matches_triple_loop_bitwise():
    rng = np.random.default_rng(3)
    a, b = _random_pair(rng, 9, 17, 4)
    assert _pykernels.matmul(a, b).tobytes() == naive_matmul(a, b).tobytes()


def test_relu_zero_sign():
    out = _kernels.relu(np.array([[-0.0, 0.0, -1.0, 2.0]]))
    assert out.tolist() == [[0.0, 0.0, 0.0, 2.0]]
    assert not np.signbit(out[0, 0])


def test_kernel_shape_validation():
    with pytest.raises(ValueError):
        _kernels.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        _kernels.relu(np.zeros(5))


def test_backend_reported():
    import os
    assert _kernels.BACKEND in ("python", "compiled")
    requested = os.environ.get("ENSYTH_KERNELS", "auto")
    if requested == "python":
        assert _kernels.BACKEND == "python"
    elif _ckernels is not None:
        assert _kernels.BACKEND == "compiled"
