"""Pure-Python (numpy) kernels, bit-identical to the compiled ones.

``matmul`` accumulates over the inner dimension with a running sum, one
rank-1 update per step: every output cell sees exactly the same sequence
of IEEE-754 multiplies and adds as the compiled triple loop, so both
backends produce the same bits.
"""

import numpy as np


def matmul(a, b):
    m, kdim = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for k in range(kdim):
        out += a[:, k, np.newaxis] * b[k, :]
    return out


def relu(a):
    return np.where(a > 0.0, a, 0.0)
