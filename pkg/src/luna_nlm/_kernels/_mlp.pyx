# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled MLP kernels.

Same contract as ``_numpy``: dgemm for the affine maps, fused bias-add and
activation loops to avoid intermediate allocations. Small matrices dominate
here (layer widths of tens), where Python dispatch overhead is the cost that
matters.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh as ctanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ACT_RELU = 0
ACT_TANH = 1


cdef void _x_wt(double[:, ::1] x, double[:, ::1] w, double[:, ::1] out) noexcept nogil:
    # out (n,m) = x (n,k) @ w.T with w (m,k); row-major buffers, BLAS column-major view
    cdef int n = <int>x.shape[0], k = <int>x.shape[1], m = <int>w.shape[0]
    cdef double one = 1.0, zero = 0.0
    if n == 0 or m == 0 or k == 0:
        return
    dgemm("T", "N", &m, &n, &k, &one, &w[0, 0], &k, &x[0, 0], &k, &zero, &out[0, 0], &m)


cdef void _at_b(double[:, ::1] dz, double[:, ::1] aprev, double[:, ::1] out) noexcept nogil:
    # out (m,k) = dz.T (m,n) @ aprev (n,k) with dz (n,m); weight gradient
    cdef int n = <int>dz.shape[0], m = <int>dz.shape[1], k = <int>aprev.shape[1]
    cdef double one = 1.0, zero = 0.0
    if m == 0 or k == 0:
        return
    if n == 0:
        out[:, :] = 0.0
        return
    dgemm("N", "T", &k, &m, &n, &one, &aprev[0, 0], &k, &dz[0, 0], &m, &zero, &out[0, 0], &k)


cdef void _a_b(double[:, ::1] dz, double[:, ::1] w, double[:, ::1] out) noexcept nogil:
    # out (n,k) = dz (n,m) @ w (m,k)
    cdef int n = <int>dz.shape[0], m = <int>dz.shape[1], k = <int>w.shape[1]
    cdef double one = 1.0, zero = 0.0
    if n == 0 or k == 0:
        return
    if m == 0:
        out[:, :] = 0.0
        return
    dgemm("N", "N", &k, &n, &m, &one, &w[0, 0], &k, &dz[0, 0], &m, &zero, &out[0, 0], &k)


def mlp_forward(list weights, list biases, int act_id, x):
    cdef double[:, ::1] a, z, anew, wv
    cdef double[::1] b
    cdef Py_ssize_t i, j, n, m
    cdef double v

    a = np.ascontiguousarray(x, dtype=np.float64)
    acts = [np.asarray(a)]
    pres = []
    for w_arr, b_arr in zip(weights, biases):
        wv = np.ascontiguousarray(w_arr, dtype=np.float64)
        b = np.ascontiguousarray(b_arr, dtype=np.float64)
        n = a.shape[0]
        m = wv.shape[0]
        z_arr = np.empty((n, m), dtype=np.float64)
        anew_arr = np.empty((n, m), dtype=np.float64)
        z = z_arr
        anew = anew_arr
        _x_wt(a, wv, z)
        with nogil:
            if act_id == 0:
                for i in range(n):
                    for j in range(m):
                        v = z[i, j] + b[j]
                        z[i, j] = v
                        anew[i, j] = v if v > 0.0 else 0.0
            else:
                for i in range(n):
                    for j in range(m):
                        v = z[i, j] + b[j]
                        z[i, j] = v
                        anew[i, j] = ctanh(v)
        pres.append(z_arr)
        acts.append(anew_arr)
        a = anew
    return acts, pres


def mlp_backward(list weights, int act_id, list acts, list pres, cotangent):
    cdef double[:, ::1] g, dz, zv, av, wv, aprev, dw, gnew
    cdef double[::1] db
    cdef Py_ssize_t i, j, n, m
    cdef Py_ssize_t layer

    g = np.ascontiguousarray(cotangent, dtype=np.float64)
    gref = np.asarray(g)
    wgrads = [None] * len(weights)
    bgrads = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        wv = np.ascontiguousarray(weights[layer], dtype=np.float64)
        zv = np.ascontiguousarray(pres[layer], dtype=np.float64)
        av = np.ascontiguousarray(acts[layer + 1], dtype=np.float64)
        n = g.shape[0]
        m = g.shape[1]
        dz_arr = np.empty((n, m), dtype=np.float64)
        db_arr = np.zeros(m, dtype=np.float64)
        dz = dz_arr
        db = db_arr
        with nogil:
            if act_id == 0:
                for i in range(n):
                    for j in range(m):
                        dz[i, j] = g[i, j] if zv[i, j] > 0.0 else 0.0
                        db[j] += dz[i, j]
            else:
                for i in range(n):
                    for j in range(m):
                        dz[i, j] = g[i, j] * (1.0 - av[i, j] * av[i, j])
                        db[j] += dz[i, j]
        aprev = np.ascontiguousarray(acts[layer], dtype=np.float64)
        dw_arr = np.empty((m, aprev.shape[1]), dtype=np.float64)
        gnew_arr = np.empty((n, wv.shape[1]), dtype=np.float64)
        dw = dw_arr
        gnew = gnew_arr
        _at_b(dz, aprev, dw)
        _a_b(dz, wv, gnew)
        wgrads[layer] = dw_arr
        bgrads[layer] = db_arr
        g = gnew
        gref = gnew_arr
    return wgrads, bgrads, gref
