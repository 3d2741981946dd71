# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution and biquad kernels.

Convolutions are im2col into a reused scratch buffer followed by one BLAS
``dgemm`` per batch item. All arrays are C-contiguous float64; the
row-major products are issued to column-major BLAS as their transposes.
"""

import numpy as np
from scipy.linalg.cython_blas cimport dgemm


cdef void _im2col(const double[:, ::1] x, double[:, ::1] col, int k,
                  int stride, int padding) noexcept nogil:
    cdef int cin = x.shape[0]
    cdef int length = x.shape[1]
    cdef int out_len = col.shape[1]
    cdef int c, j, t, src
    for c in range(cin):
        for j in range(k):
            for t in range(out_len):
                src = t * stride + j - padding
                if 0 <= src < length:
                    col[c * k + j, t] = x[c, src]
                else:
                    col[c * k + j, t] = 0.0


cdef void _col2im_add(const double[:, ::1] col, double[:, ::1] gx, int k,
                      int stride, int padding) noexcept nogil:
    cdef int cin = gx.shape[0]
    cdef int length = gx.shape[1]
    cdef int out_len = col.shape[1]
    cdef int c, j, t, dst
    for c in range(cin):
        for j in range(k):
            for t in range(out_len):
                dst = t * stride + j - padding
                if 0 <= dst < length:
                    gx[c, dst] += col[c * k + j, t]


def conv1d_forward(x, w, int stride, int padding):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int b = xv.shape[0], cin = xv.shape[1], length = xv.shape[2]
    cdef int cout = wv.shape[0], k = wv.shape[2]
    cdef int out_len = (length + 2 * padding - k) // stride + 1
    cdef int ck = cin * k
    y = np.empty((b, cout, out_len))
    cdef double[:, :, ::1] yv = y
    cdef double[:, ::1] col = np.empty((ck, out_len))
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N'
    cdef int i
    with nogil:
        for i in range(b):
            _im2col(xv[i], col, k, stride, padding)
            dgemm(&tn, &tn, &out_len, &cout, &ck, &one, &col[0, 0], &out_len,
                  <double*>&wv[0, 0, 0], &ck, &zero, &yv[i, 0, 0], &out_len)
    return y


def conv1d_backward_input(gy, w, int stride, int padding, int length):
    cdef const double[:, :, ::1] gyv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef int b = gyv.shape[0], cout = gyv.shape[1], out_len = gyv.shape[2]
    cdef int cin = wv.shape[1], k = wv.shape[2]
    cdef int ck = cin * k
    gx = np.zeros((b, cin, length))
    cdef double[:, :, ::1] gxv = gx
    cdef double[:, ::1] col = np.empty((ck, out_len))
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef int i
    with nogil:
        for i in range(b):
            dgemm(&tn, &tt, &out_len, &ck, &cout, &one, <double*>&gyv[i, 0, 0],
                  &out_len, <double*>&wv[0, 0, 0], &ck, &zero, &col[0, 0], &out_len)
            _col2im_add(col, gxv[i], k, stride, padding)
    return gx


def conv1d_backward_weight(x, gy, int stride, int padding, int kernel_size):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] gyv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef int b = xv.shape[0], cin = xv.shape[1]
    cdef int cout = gyv.shape[1], out_len = gyv.shape[2]
    cdef int k = kernel_size
    cdef int ck = cin * k
    gw = np.zeros((cout, cin, k))
    cdef double[:, :, ::1] gwv = gw
    cdef double[:, ::1] col = np.empty((ck, out_len))
    cdef double one = 1.0
    cdef char tn = b'N', tt = b'T'
    cdef int i
    with nogil:
        for i in range(b):
            _im2col(xv[i], col, k, stride, padding)
            dgemm(&tt, &tn, &ck, &cout, &out_len, &one, &col[0, 0], &out_len,
                  <double*>&gyv[i, 0, 0], &out_len, &one, &gwv[0, 0, 0], &ck)
    return gw


def sosfilt(sos, x, zi):
    cdef const double[:, ::1] sv = np.ascontiguousarray(sos, dtype=np.float64)
    y = np.array(x, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] yv = y
    cdef double[:, :, ::1] zv = zi
    cdef int rows = yv.shape[0], n = yv.shape[1], nsec = sv.shape[0]
    cdef int r, s, i
    cdef double b0, b1, b2, a1, a2, z0, z1, xn, yn
    with nogil:
        for r in range(rows):
            for s in range(nsec):
                b0 = sv[s, 0]; b1 = sv[s, 1]; b2 = sv[s, 2]
                a1 = sv[s, 4]; a2 = sv[s, 5]
                z0 = zv[r, s, 0]; z1 = zv[r, s, 1]
                for i in range(n):
                    xn = yv[r, i]
                    yn = b0 * xn + z0
                    z0 = b1 * xn - a1 * yn + z1
                    z1 = b2 * xn - a2 * yn
                    yv[r, i] = yn
                zv[r, s, 0] = z0
                zv[r, s, 1] = z1
    return y
