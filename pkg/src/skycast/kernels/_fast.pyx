# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled recurrent-scan kernels.

Same contract as ``kernels.pure`` (see that module for shapes and the
reference math). Per step, the hidden matmul goes through BLAS dgemm and
all gate arithmetic runs in one fused loop; the large input/weight matmuls
stay in numpy where BLAS already does the work.
"""

import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

__all__ = ["lstm_forward", "lstm_backward"]


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef void _matmul(double[:, ::1] A, double[:, ::1] B, double[:, ::1] C) nogil:
    # Row-major C(M,N) = A(M,K) @ B(K,N). Fortran BLAS sees row-major
    # arrays as their transposes, so compute C^T = B^T A^T by swapping
    # the operand order; no copies or explicit transposes needed.
    cdef int M = A.shape[0]
    cdef int K = A.shape[1]
    cdef int N = B.shape[1]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char *tn = b'n'
    dgemm(tn, tn, &N, &M, &K, &one, &B[0, 0], &N, &A[0, 0], &K, &zero, &C[0, 0], &N)


cdef void _forward_scan(
    double[:, :, ::1] xw,
    double[::1] b,
    double[:, ::1] R,
    double[:, ::1] h,
    double[:, ::1] c,
    double[:, ::1] tmp,
    double[:, :, ::1] h_seq,
    double[:, :, ::1] c_seq,
    double[:, :, ::1] gates,
) nogil:
    cdef Py_ssize_t Bn = xw.shape[0]
    cdef Py_ssize_t T = xw.shape[1]
    cdef Py_ssize_t H = R.shape[0]
    cdef Py_ssize_t t, n, j
    cdef double ai, af, ag, ao, gi, gf, gg, go, cv, hv
    for t in range(T):
        _matmul(h, R, tmp)
        for n in range(Bn):
            for j in range(H):
                ai = xw[n, t, j] + tmp[n, j] + b[j]
                af = xw[n, t, H + j] + tmp[n, H + j] + b[H + j]
                ag = xw[n, t, 2 * H + j] + tmp[n, 2 * H + j] + b[2 * H + j]
                ao = xw[n, t, 3 * H + j] + tmp[n, 3 * H + j] + b[3 * H + j]
                gi = _sigmoid(ai)
                gf = _sigmoid(af)
                gg = tanh(ag)
                go = _sigmoid(ao)
                cv = gf * c[n, j] + gi * gg
                hv = go * tanh(cv)
                c[n, j] = cv
                h[n, j] = hv
                gates[n, t, j] = gi
                gates[n, t, H + j] = gf
                gates[n, t, 2 * H + j] = gg
                gates[n, t, 3 * H + j] = go
                c_seq[n, t, j] = cv
                h_seq[n, t, j] = hv


cdef void _backward_scan(
    double[:, :, ::1] gates,
    double[:, :, ::1] c_seq,
    double[:, ::1] RT,
    double[:, ::1] dh,
    double[:, ::1] dc,
    double[:, ::1] da_t,
    double[:, :, ::1] da_seq,
) nogil:
    cdef Py_ssize_t Bn = gates.shape[0]
    cdef Py_ssize_t T = gates.shape[1]
    cdef Py_ssize_t H = dh.shape[1]
    cdef Py_ssize_t t, n, j
    cdef double gi, gf, gg, go, cv, cp, tc, dov, dcv, v
    for t in range(T - 1, -1, -1):
        for n in range(Bn):
            for j in range(H):
                gi = gates[n, t, j]
                gf = gates[n, t, H + j]
                gg = gates[n, t, 2 * H + j]
                go = gates[n, t, 3 * H + j]
                cv = c_seq[n, t, j]
                cp = c_seq[n, t - 1, j] if t > 0 else 0.0
                tc = tanh(cv)
                dov = dh[n, j] * tc
                dcv = dc[n, j] + dh[n, j] * go * (1.0 - tc * tc)
                v = (dcv * gg) * gi * (1.0 - gi)
                da_t[n, j] = v
                da_seq[n, t, j] = v
                v = (dcv * cp) * gf * (1.0 - gf)
                da_t[n, H + j] = v
                da_seq[n, t, H + j] = v
                v = (dcv * gi) * (1.0 - gg * gg)
                da_t[n, 2 * H + j] = v
                da_seq[n, t, 2 * H + j] = v
                v = dov * go * (1.0 - go)
                da_t[n, 3 * H + j] = v
                da_seq[n, t, 3 * H + j] = v
                dc[n, j] = dcv * gf
        # dh for step t-1; the elementwise pass above has already
        # consumed this step's dh, so overwriting in place is safe.
        _matmul(da_t, RT, dh)


def lstm_forward(x, W, R, b):
    """See ``kernels.pure.lstm_forward``; identical contract."""
    B, T, C = x.shape
    H = R.shape[0]
    x = np.ascontiguousarray(x, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    R = np.ascontiguousarray(R, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    xw = np.ascontiguousarray((x.reshape(B * T, C) @ W).reshape(B, T, 4 * H))
    h_seq = np.empty((B, T, H))
    c_seq = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    tmp = np.empty((B, 4 * H))
    _forward_scan(xw, b, R, h, c, tmp, h_seq, c_seq, gates)
    return h_seq, c_seq, gates


def lstm_backward(x, W, R, gates, c_seq, h_seq, dh_last):
    """See ``kernels.pure.lstm_backward``; identical contract."""
    B, T, C = x.shape
    H = R.shape[0]
    x = np.ascontiguousarray(x, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    gates = np.ascontiguousarray(gates, dtype=np.float64)
    c_seq = np.ascontiguousarray(c_seq, dtype=np.float64)
    h_seq = np.ascontiguousarray(h_seq, dtype=np.float64)
    RT = np.ascontiguousarray(np.asarray(R, dtype=np.float64).T)
    da_seq = np.empty((B, T, 4 * H))
    dh = np.ascontiguousarray(dh_last, dtype=np.float64).copy()
    dc = np.zeros((B, H))
    da_t = np.empty((B, 4 * H))
    _backward_scan(gates, c_seq, RT, dh, dc, da_t, da_seq)
    da_flat = da_seq.reshape(B * T, 4 * H)
    dx = (da_flat @ W.T).reshape(B, T, C)
    dW = x.reshape(B * T, C).T @ da_flat
    h_prev = np.concatenate([np.zeros((B, 1, H)), h_seq[:, :-1]], axis=1)
    dR = h_prev.reshape(B * T, H).T @ da_flat
    db = da_flat.sum(axis=0)
    return dx, dW, dR, db
