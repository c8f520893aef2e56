# cython: language_level=3
"""Compiled sequential kernels for linear recurrences.

All kernels share one indexing convention: the state starts at zero, the
state stored for step ``k`` has seen inputs ``u[0], ..., u[k-1]``, and rows
are only kept for ``k >= washout``.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _diag_run(const double[::1] lr, const double[::1] li,
                           const double[::1] br, const double[::1] bi,
                           const double[::1] u, Py_ssize_t washout,
                           double[::1] xr, double[::1] xi,
                           double complex[:, ::1] out) noexcept nogil:
    # explicit real arithmetic avoids the slow C99 complex multiply
    cdef Py_ssize_t n = lr.shape[0]
    cdef Py_ssize_t length = u.shape[0]
    cdef Py_ssize_t k, i
    cdef double uk, re, im
    for i in range(n):
        xr[i] = 0.0
        xi[i] = 0.0
    for k in range(length):
        if k >= washout:
            for i in range(n):
                out[k - washout, i] = xr[i] + 1j * xi[i]
        uk = u[k]
        for i in range(n):
            re = lr[i] * xr[i] - li[i] * xi[i] + br[i] * uk
            im = lr[i] * xi[i] + li[i] * xr[i] + bi[i] * uk
            xr[i] = re
            xi[i] = im


def diag_recurrence(lam, b, const double[::1] u, Py_ssize_t washout):
    """Run ``x[k+1] = lam * x[k] + b * u[k]`` for a diagonal system.

    Returns a ``(len(u) - washout, n)`` complex array of stored states.
    """
    lam = np.asarray(lam, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    cdef const double[::1] lr = np.ascontiguousarray(lam.real)
    cdef const double[::1] li = np.ascontiguousarray(lam.imag)
    cdef const double[::1] br = np.ascontiguousarray(b.real)
    cdef const double[::1] bi = np.ascontiguousarray(b.imag)
    cdef Py_ssize_t n = lr.shape[0]
    cdef double[::1] xr = np.zeros(n)
    cdef double[::1] xi = np.zeros(n)
    out_arr = np.empty((u.shape[0] - washout, n), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    with nogil:
        _diag_run(lr, li, br, bi, u, washout, xr, xi, out)
    return out_arr


def diag_recurrence_batch(lam, b, const double[:, ::1] u, Py_ssize_t washout):
    """Batched :func:`diag_recurrence` over the rows of ``u``.

    Returns a ``(draws, len - washout, n)`` complex array.
    """
    lam = np.asarray(lam, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    cdef const double[::1] lr = np.ascontiguousarray(lam.real)
    cdef const double[::1] li = np.ascontiguousarray(lam.imag)
    cdef const double[::1] br = np.ascontiguousarray(b.real)
    cdef const double[::1] bi = np.ascontiguousarray(b.imag)
    cdef Py_ssize_t n = lr.shape[0]
    cdef Py_ssize_t draws = u.shape[0]
    cdef Py_ssize_t d
    cdef double[::1] xr = np.zeros(n)
    cdef double[::1] xi = np.zeros(n)
    out_arr = np.empty((draws, u.shape[1] - washout, n), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    with nogil:
        for d in range(draws):
            _diag_run(lr, li, br, bi, u[d], washout, xr, xi, out[d])
    return out_arr


def dense_recurrence(const double[:, ::1] a, const double[::1] b,
                     const double[::1] u, Py_ssize_t washout):
    """Run ``x[k+1] = A x[k] + b u[k]`` for a dense real system."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t length = u.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double[::1] x = np.zeros(n, dtype=np.float64)
    cdef double[::1] nxt = np.zeros(n, dtype=np.float64)
    out_arr = np.empty((length - washout, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double acc, uk
    for k in range(length):
        if k >= washout:
            for i in range(n):
                out[k - washout, i] = x[i]
        uk = u[k]
        for i in range(n):
            acc = b[i] * uk
            for j in range(n):
                acc = acc + a[i, j] * x[j]
            nxt[i] = acc
        for i in range(n):
            x[i] = nxt[i]
    return out_arr
