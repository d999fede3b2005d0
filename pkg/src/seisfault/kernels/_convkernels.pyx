# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels: im2col/col2im packing + BLAS GEMM.

Contract identical to numpy_backend (see its docstring for layouts and the
adjoint relations). Packing and scatter loops are typed single-pass code;
the arithmetic runs in sgemm/dgemm. The packed column buffer is reused
across the batch, and out-of-range taps stay zero from allocation because
their positions do not depend on the batch index.

BLAS is column-major; every call below uses the row-major identity
C = opA(A) @ opB(B)  <=>  gemm(flagB, flagA, n, m, k, B, A, C).
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t padding, Py_ssize_t tap, Py_ssize_t stride) noexcept nogil:
    # smallest index i with i*stride - padding + tap >= 0
    cdef Py_ssize_t a = padding - tap
    if a <= 0:
        return 0
    return (a + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t limit, Py_ssize_t padding, Py_ssize_t tap,
                           Py_ssize_t stride, Py_ssize_t cap) noexcept nogil:
    # one past the largest index i with i*stride - padding + tap <= limit - 1
    cdef Py_ssize_t a = limit - 1 + padding - tap
    cdef Py_ssize_t hi
    if a < 0:
        return 0
    hi = a // stride + 1
    return cap if hi > cap else hi


cdef inline void _gemm(bint is_float, char ta, char tb, int m, int n, int k,
                       void *a, int lda, void *b, int ldb, double beta,
                       void *c, int ldc) noexcept nogil:
    cdef float af = 1.0, bf
    cdef double ad = 1.0, bd
    if is_float:
        bf = <float> beta
        sgemm(&ta, &tb, &m, &n, &k, &af, <float *> a, &lda, <float *> b, &ldb, &bf, <float *> c, &ldc)
    else:
        bd = beta
        dgemm(&ta, &tb, &m, &n, &k, &ad, <double *> a, &lda, <double *> b, &ldb, &bd, <double *> c, &ldc)


cdef void _pack_cols(real[:, ::1] cols, real[:, :, :, ::1] x, Py_ssize_t b,
                     Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t padding,
                     Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    # cols[(ci, p, q), (i, j)] = x[b, ci, i*stride - padding + p, j*stride - padding + q]
    cdef Py_ssize_t ci_count = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ci, p, q, i, j, u, row, base, j0, j1
    for ci in range(ci_count):
        for p in range(kh):
            for q in range(kw):
                row = (ci * kh + p) * kw + q
                j0 = _lo(padding, q, stride)
                j1 = _hi(w, padding, q, stride, wo)
                base = q - padding
                for i in range(ho):
                    u = i * stride - padding + p
                    if u < 0 or u >= h:
                        continue
                    for j in range(j0, j1):
                        cols[row, i * wo + j] = x[b, ci, u, base + j * stride]


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, int stride, int padding):
    cdef Py_ssize_t B = x.shape[0], CI = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t CO = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t HO = (H + 2 * padding - KH) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * padding - KW) // stride + 1
    cdef Py_ssize_t R = CI * KH * KW, L = HO * WO
    cdef bint is_float = (real is float)
    dtype = np.float32 if is_float else np.float64
    out = np.zeros((B, CO, HO, WO), dtype=dtype)
    cols_arr = np.zeros((R, L), dtype=dtype)
    cdef real[:, :, :, ::1] y = out
    cdef real[:, ::1] cols = cols_arr
    cdef real[:, :, :, ::1] wv = w
    cdef Py_ssize_t b
    if R == 0 or L == 0 or CO == 0 or B == 0:
        return out
    with nogil:
        for b in range(B):
            _pack_cols(cols, x, b, KH, KW, stride, padding, HO, WO)
            # y[b] (CO, L) = w2 (CO, R) @ cols (R, L)
            _gemm(is_float, b'N', b'N', <int> L, <int> CO, <int> R,
                  &cols[0, 0], <int> L, &wv[0, 0, 0, 0], <int> R, 0.0,
                  &y[b, 0, 0, 0], <int> L)
    return out


def conv_transpose2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                             int stride, int padding, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t B = x.shape[0], CI = x.shape[1], HI = x.shape[2], WI = x.shape[3]
    cdef Py_ssize_t CO = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t R = CO * KH * KW, L = HI * WI
    cdef bint is_float = (real is float)
    dtype = np.float32 if is_float else np.float64
    out = np.zeros((B, CO, out_h, out_w), dtype=dtype)
    cols_arr = np.empty((R, L), dtype=dtype)
    cdef real[:, :, :, ::1] y = out
    cdef real[:, ::1] cols = cols_arr
    cdef real[:, :, :, ::1] wv = w
    cdef Py_ssize_t b, co, p, q, i, j, u, row, base, i0, i1, j0, j1
    if R == 0 or L == 0 or B == 0:
        return out
    with nogil:
        for b in range(B):
            # cols (R, L) = w2^T (R, CI) @ x[b] (CI, L)
            _gemm(is_float, b'N', b'T', <int> L, <int> R, <int> CI,
                  &x[b, 0, 0, 0], <int> L, &wv[0, 0, 0, 0], <int> R, 0.0,
                  &cols[0, 0], <int> L)
            # col2im scatter-add
            for co in range(CO):
                for p in range(KH):
                    i0 = _lo(padding, p, stride)
                    i1 = _hi(out_h, padding, p, stride, HI)
                    for q in range(KW):
                        row = (co * KH + p) * KW + q
                        j0 = _lo(padding, q, stride)
                        j1 = _hi(out_w, padding, q, stride, WI)
                        base = q - padding
                        for i in range(i0, i1):
                            u = i * stride - padding + p
                            for j in range(j0, j1):
                                y[b, co, u, base + j * stride] = y[b, co, u, base + j * stride] + cols[row, i * WI + j]
    return out


def conv2d_weight_grad(real[:, :, :, ::1] x, real[:, :, :, ::1] gy,
                       Py_ssize_t kh, Py_ssize_t kw, int stride, int padding):
    cdef Py_ssize_t B = x.shape[0], CI = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t CO = gy.shape[1], HO = gy.shape[2], WO = gy.shape[3]
    cdef Py_ssize_t R = CI * kh * kw, L = HO * WO
    cdef bint is_float = (real is float)
    dtype = np.float32 if is_float else np.float64
    out = np.zeros((CO, CI, kh, kw), dtype=dtype)
    cols_arr = np.zeros((R, L), dtype=dtype)
    cdef real[:, ::1] gw2 = out.reshape(CO, R) if R else out.reshape(CO, 1)
    cdef real[:, ::1] cols = cols_arr
    cdef real[:, :, :, ::1] gyv = gy
    cdef Py_ssize_t b
    if R == 0 or L == 0 or CO == 0 or B == 0:
        return out
    with nogil:
        for b in range(B):
            _pack_cols(cols, x, b, kh, kw, stride, padding, HO, WO)
            # gw2 (CO, R) += gy[b] (CO, L) @ cols^T (L, R)
            _gemm(is_float, b'T', b'N', <int> R, <int> CO, <int> L,
                  &cols[0, 0], <int> L, &gyv[b, 0, 0, 0], <int> L, 1.0,
                  &gw2[0, 0], <int> R)
    return out
