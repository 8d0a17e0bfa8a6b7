# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled AugMix kernels.  Mirrors ``_kernels_py`` expression by expression."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.string cimport memcpy, memset

cnp.import_array()

cdef enum:
    AUTOCONTRAST = 0
    EQUALIZE = 1
    POSTERIZE = 2
    SOLARIZE = 3
    ROTATE = 4
    TRANSLATE_Y = 8
    IDENTITY = 9


cdef inline long _quantize(double v) nogil:
    return <long>floor(v * 255.0 + 0.5)


cdef int _op(const double* src, double* dst, int C, int H, int W, long code,
             const double* p) nogil:
    cdef int c, i, j, n = H * W
    cdef long k, q, mask, cmin, vmin
    cdef double lo, hi, cx, cy, xx, yy, xs, ys
    cdef long js, is_
    cdef long hist[256]
    cdef const double* s
    cdef double* d
    if code == AUTOCONTRAST:
        for c in range(C):
            s = src + c * n
            d = dst + c * n
            lo = s[0]
            hi = s[0]
            for k in range(1, n):
                if s[k] < lo:
                    lo = s[k]
                if s[k] > hi:
                    hi = s[k]
            if hi > lo:
                for k in range(n):
                    d[k] = (s[k] - lo) / (hi - lo)
            else:
                memcpy(d, s, n * sizeof(double))
        return 0
    if code == EQUALIZE:
        for c in range(C):
            s = src + c * n
            d = dst + c * n
            memset(hist, 0, 256 * sizeof(long))
            vmin = 255
            for k in range(n):
                q = _quantize(s[k])
                hist[q] += 1
                if q < vmin:
                    vmin = q
            for q in range(1, 256):
                hist[q] += hist[q - 1]
            cmin = hist[vmin]
            if n > cmin:
                for k in range(n):
                    d[k] = <double>(hist[_quantize(s[k])] - cmin) / <double>(n - cmin)
            else:
                memcpy(d, s, n * sizeof(double))
        return 0
    if code == POSTERIZE:
        mask = (0xFF << (8 - <long>p[0])) & 0xFF
        for k in range(C * n):
            dst[k] = <double>(_quantize(src[k]) & mask) / 255.0
        return 0
    if code == SOLARIZE:
        for k in range(C * n):
            dst[k] = 1.0 - src[k] if src[k] >= p[0] else src[k]
        return 0
    if ROTATE <= code <= TRANSLATE_Y:
        cy = (H - 1) / 2.0
        cx = (W - 1) / 2.0
        for i in range(H):
            yy = i - cy
            for j in range(W):
                xx = j - cx
                xs = p[0] * xx + p[1] * yy + p[2]
                ys = p[3] * xx + p[4] * yy + p[5]
                js = <long>floor(xs + cx + 0.5)
                is_ = <long>floor(ys + cy + 0.5)
                if 0 <= js < W and 0 <= is_ < H:
                    for c in range(C):
                        dst[c * n + i * W + j] = src[c * n + is_ * W + js]
                else:
                    for c in range(C):
                        dst[c * n + i * W + j] = 0.0
        return 0
    if code == IDENTITY:
        memcpy(dst, src, C * n * sizeof(double))
        return 0
    return -1


def apply_op(cnp.ndarray img, code, params):
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] out = np.empty_like(src)
    if _op(&src[0, 0, 0], &out[0, 0, 0], src.shape[0], src.shape[1], src.shape[2],
           int(code), &p[0]) != 0:
        raise ValueError(f"unknown op code {code}")
    return out


def augmix_batch(X, nchains, weights, depth, ops, params, m):
    cdef const double[:, :, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef long[::1] nch = np.ascontiguousarray(nchains, dtype=np.int64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef long[:, ::1] dep = np.ascontiguousarray(depth, dtype=np.int64)
    cdef long[:, :, ::1] opc = np.ascontiguousarray(ops, dtype=np.int64)
    cdef double[:, :, :, ::1] prm = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] mm = np.ascontiguousarray(m, dtype=np.float64)
    cdef int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int size = C * H * W
    out_arr = np.empty((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[::1] acc = np.empty(size, dtype=np.float64)
    cdef double[::1] buf_a = np.empty(size, dtype=np.float64)
    cdef double[::1] buf_b = np.empty(size, dtype=np.float64)
    cdef int b, i, d, k
    cdef double* cur
    cdef double* nxt
    cdef double* tmp
    cdef const double* xb
    cdef double* ob
    cdef double wi, mb, v
    for b in range(B):
        if nch[b] < 0 or nch[b] > w.shape[1]:
            raise ValueError("chain count out of range")
        for i in range(nch[b]):
            for d in range(dep[b, i]):
                if not 0 <= opc[b, i, d] <= IDENTITY:
                    raise ValueError(f"unknown op code {opc[b, i, d]}")
    with nogil:
        for b in range(B):
            xb = &x[b, 0, 0, 0]
            ob = &out[b, 0, 0, 0]
            for k in range(size):
                acc[k] = 0.0
            for i in range(nch[b]):
                memcpy(&buf_a[0], xb, size * sizeof(double))
                cur = &buf_a[0]
                nxt = &buf_b[0]
                for d in range(dep[b, i]):
                    _op(cur, nxt, C, H, W, opc[b, i, d], &prm[b, i, d, 0])
                    tmp = cur
                    cur = nxt
                    nxt = tmp
                wi = w[b, i]
                for k in range(size):
                    acc[k] += wi * cur[k]
            mb = mm[b]
            for k in range(size):
                v = mb * xb[k] + (1.0 - mb) * acc[k]
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                ob[k] = v
    return out_arr
