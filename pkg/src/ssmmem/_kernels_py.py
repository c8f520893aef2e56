"""Pure-Python reference kernels.

Same signatures and indexing convention as the compiled ``_kernels`` module.
They step through time with numpy vector operations and are used whenever
the extension is unavailable or ``SSMMEM_PURE_PYTHON`` is set.
"""
import numpy as np


def diag_recurrence(lam, b, u, washout):
    lam = np.asarray(lam, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    u = np.asarray(u, dtype=np.float64)
    length = u.shape[0]
    out = np.empty((length - washout, lam.shape[0]), dtype=np.complex128)
    x = np.zeros(lam.shape[0], dtype=np.complex128)
    for k in range(length):
        if k >= washout:
            out[k - washout] = x
        x = lam * x + b * u[k]
    return out


def diag_recurrence_batch(lam, b, u, washout):
    lam = np.asarray(lam, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    u = np.asarray(u, dtype=np.float64)
    draws, length = u.shape
    out = np.empty((draws, length - washout, lam.shape[0]), dtype=np.complex128)
    x = np.zeros((draws, lam.shape[0]), dtype=np.complex128)
    for k in range(length):
        if k >= washout:
            out[:, k - washout] = x
        x = lam * x + b * u[:, k, None]
    return out


def dense_recurrence(a, b, u, washout):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    length = u.shape[0]
    out = np.empty((length - washout, a.shape[0]), dtype=np.float64)
    x = np.zeros(a.shape[0], dtype=np.float64)
    for k in range(length):
        if k >= washout:
            out[k - washout] = x
        x = a @ x + b * u[k]
    return out
