# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled recurrent kernels: batched rollout, BPTT, and autonomous settling.

Same contracts as ``rnnmimic._kernels_py``; the sequential time loop runs in C
and the per-step matrix products go through BLAS dgemm.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline void _dgemm_rm(char transa, char transb, int m, int n, int k,
                           double alpha, double* a, int lda,
                           double* b, int ldb,
                           double beta, double* c, int ldc) noexcept nogil:
    # Row-major C(m,n) = alpha*opA(A)*opB(B) + beta*C via column-major BLAS:
    # swap operands, keep flags.
    dgemm(&transb, &transa, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def rollout_batch(double[:, ::1] w_hh, double[:, ::1] w_ih, double[:, ::1] a,
                  double[:, :, ::1] x, double[:, :, ::1] g, double tau,
                  double[:, ::1] h0, act_scale=None):
    cdef int B = x.shape[0]
    cdef int T = x.shape[1]
    cdef int d = x.shape[2]
    cdef int H = w_hh.shape[0]
    cdef cnp.ndarray z_arr = np.empty((B, T, H))
    cdef cnp.ndarray h_arr = np.empty((B, T, H))
    cdef cnp.ndarray y_arr = np.empty((B, T, 3))
    cdef cnp.ndarray s_arr = np.empty((B, T, 3))
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, ::1] h = h_arr
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, ::1] s = s_arr
    cdef double[:, ::1] scale
    cdef bint scaled = act_scale is not None
    if scaled:
        scale = np.ascontiguousarray(act_scale, dtype=np.float64).reshape(1, H)
    else:
        scale = np.ones((1, H))
    cdef double* h_prev = &h0[0, 0]
    cdef int h_prev_ld = H
    cdef int t, b, i
    cdef double m0, e0, e1, e2, tot, v
    with nogil:
        for t in range(T):
            # z_t = h_prev @ w_hh.T + x_t @ w_ih.T
            _dgemm_rm(b'N', b'T', B, H, H, 1.0, h_prev, h_prev_ld,
                      &w_hh[0, 0], H, 0.0, &z[0, t, 0], T * H)
            _dgemm_rm(b'N', b'T', B, H, d, 1.0, &x[0, t, 0], T * d,
                      &w_ih[0, 0], d, 1.0, &z[0, t, 0], T * H)
            for b in range(B):
                for i in range(H):
                    v = z[b, t, i]
                    if v > 0.0:
                        if scaled:
                            h[b, t, i] = v * scale[0, i]
                        else:
                            h[b, t, i] = v
                    else:
                        h[b, t, i] = 0.0
            # y_t = h_t @ a.T
            _dgemm_rm(b'N', b'T', B, 3, H, 1.0, &h[0, t, 0], T * H,
                      &a[0, 0], H, 0.0, &y[0, t, 0], T * 3)
            for b in range(B):
                e0 = (y[b, t, 0] + g[b, t, 0]) / tau
                e1 = (y[b, t, 1] + g[b, t, 1]) / tau
                e2 = (y[b, t, 2] + g[b, t, 2]) / tau
                m0 = e0
                if e1 > m0:
                    m0 = e1
                if e2 > m0:
                    m0 = e2
                e0 = exp(e0 - m0)
                e1 = exp(e1 - m0)
                e2 = exp(e2 - m0)
                tot = e0 + e1 + e2
                s[b, t, 0] = e0 / tot
                s[b, t, 1] = e1 / tot
                s[b, t, 2] = e2 / tot
            h_prev = &h[0, t, 0]
            h_prev_ld = T * H
    return z_arr, h_arr, y_arr, s_arr


def bptt_batch(double[:, ::1] w_hh, double[:, ::1] w_ih, double[:, ::1] a,
               double[:, :, ::1] x, double[:, ::1] h0,
               double[:, :, ::1] z, double[:, :, ::1] h, double[:, :, ::1] s,
               double[:, :, ::1] dl_ds, double tau):
    cdef int B = x.shape[0]
    cdef int T = x.shape[1]
    cdef int d = x.shape[2]
    cdef int H = w_hh.shape[0]
    cdef cnp.ndarray dw_hh_arr = np.zeros((H, H))
    cdef cnp.ndarray dw_ih_arr = np.zeros((H, d))
    cdef cnp.ndarray da_arr = np.zeros((3, H))
    cdef double[:, ::1] dw_hh = dw_hh_arr
    cdef double[:, ::1] dw_ih = dw_ih_arr
    cdef double[:, ::1] da = da_arr
    cdef double[:, ::1] dy = np.empty((B, 3))
    cdef double[:, ::1] dh = np.empty((B, H))
    cdef double[:, ::1] dz = np.empty((B, H))
    cdef double[:, ::1] dh_next = np.zeros((B, H))
    cdef int t, b, i
    cdef double dot
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                dot = (dl_ds[b, t, 0] * s[b, t, 0] + dl_ds[b, t, 1] * s[b, t, 1]
                       + dl_ds[b, t, 2] * s[b, t, 2])
                dy[b, 0] = s[b, t, 0] * (dl_ds[b, t, 0] - dot) / tau
                dy[b, 1] = s[b, t, 1] * (dl_ds[b, t, 1] - dot) / tau
                dy[b, 2] = s[b, t, 2] * (dl_ds[b, t, 2] - dot) / tau
            # da += dy.T @ h_t
            _dgemm_rm(b'T', b'N', 3, H, B, 1.0, &dy[0, 0], 3,
                      &h[0, t, 0], T * H, 1.0, &da[0, 0], H)
            # dh = dy @ a + dh_next
            for b in range(B):
                for i in range(H):
                    dh[b, i] = dh_next[b, i]
            _dgemm_rm(b'N', b'N', B, H, 3, 1.0, &dy[0, 0], 3,
                      &a[0, 0], H, 1.0, &dh[0, 0], H)
            for b in range(B):
                for i in range(H):
                    if z[b, t, i] > 0.0:
                        dz[b, i] = dh[b, i]
                    else:
                        dz[b, i] = 0.0
            if t == 0:
                _dgemm_rm(b'T', b'N', H, H, B, 1.0, &dz[0, 0], H,
                          &h0[0, 0], H, 1.0, &dw_hh[0, 0], H)
            else:
                _dgemm_rm(b'T', b'N', H, H, B, 1.0, &dz[0, 0], H,
                          &h[0, t - 1, 0], T * H, 1.0, &dw_hh[0, 0], H)
            _dgemm_rm(b'T', b'N', H, d, B, 1.0, &dz[0, 0], H,
                      &x[0, t, 0], T * d, 1.0, &dw_ih[0, 0], d)
            # dh_next = dz @ w_hh
            _dgemm_rm(b'N', b'N', B, H, H, 1.0, &dz[0, 0], H,
                      &w_hh[0, 0], H, 0.0, &dh_next[0, 0], H)
    return dw_hh_arr, dw_ih_arr, da_arr


def settle_autonomous(double[:, ::1] w_hh, double[:, ::1] h0, int n_steps):
    cdef int B = h0.shape[0]
    cdef int H = h0.shape[1]
    cdef cnp.ndarray h_arr = np.asarray(h0).copy()
    cdef cnp.ndarray last_arr = np.zeros(B)
    cdef double[:, ::1] h = h_arr
    cdef double[::1] last = last_arr
    cdef double[:, ::1] h_new = np.empty((B, H))
    cdef int step, b, i
    cdef double v, acc
    with nogil:
        for step in range(n_steps):
            _dgemm_rm(b'N', b'T', B, H, H, 1.0, &h[0, 0], H,
                      &w_hh[0, 0], H, 0.0, &h_new[0, 0], H)
            for b in range(B):
                acc = 0.0
                for i in range(H):
                    v = h_new[b, i]
                    if v < 0.0:
                        v = 0.0
                    acc += (v - h[b, i]) * (v - h[b, i])
                    h[b, i] = v
                last[b] = sqrt(acc)
    return h_arr, last_arr
