"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Each product is rounded before it is added and the inner index is walked in
ascending order, so results match the compiled path bit for bit.
"""

import numpy as np


def matmul(a, b):
    n, kdim = a.shape
    if b.shape[0] != kdim:
        raise ValueError(f"matmul shape mismatch: ({n}, {kdim}) x ({b.shape[0]}, {b.shape[1]})")
    if kdim == 0 or n == 0 or b.shape[1] == 0:
        return np.zeros((n, b.shape[1]), dtype=np.float64)
    out = a[:, 0:1] * b[0:1, :]
    for k in range(1, kdim):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def matmul_tn(a, b):
    kdim, n = a.shape
    if b.shape[0] != kdim:
        raise ValueError(f"matmul_tn shape mismatch: ({kdim}, {n}).T x ({b.shape[0]}, {b.shape[1]})")
    if kdim == 0 or n == 0 or b.shape[1] == 0:
        return np.zeros((n, b.shape[1]), dtype=np.float64)
    out = a[0][:, None] * b[0][None, :]
    for i in range(1, kdim):
        out += a[i][:, None] * b[i][None, :]
    return out
