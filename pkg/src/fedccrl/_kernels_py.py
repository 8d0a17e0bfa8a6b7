"""Pure numpy AugMix kernels; reference for the compiled ``_kernels`` module.

Both backends evaluate the same floating point expressions in the same order,
so their outputs agree bitwise.
"""
import numpy as np

AUTOCONTRAST, EQUALIZE, POSTERIZE, SOLARIZE = 0, 1, 2, 3
ROTATE, SHEAR_X, SHEAR_Y, TRANSLATE_X, TRANSLATE_Y = 4, 5, 6, 7, 8
IDENTITY = 9


def _quantize(x):
    return np.floor(x * 255.0 + 0.5).astype(np.int64)


def _autocontrast(img):
    out = img.copy()
    for c in range(img.shape[0]):
        lo = img[c].min()
        hi = img[c].max()
        if hi > lo:
            out[c] = (img[c] - lo) / (hi - lo)
    return out


def _equalize(img):
    out = img.copy()
    n = img.shape[1] * img.shape[2]
    for c in range(img.shape[0]):
        v = _quantize(img[c])
        cdf = np.cumsum(np.bincount(v.ravel(), minlength=256))
        cmin = cdf[v.min()]
        if n > cmin:
            out[c] = (cdf[v] - cmin).astype(np.float64) / float(n - cmin)
    return out


def _posterize(img, bits):
    mask = (0xFF << (8 - int(bits))) & 0xFF
    return (_quantize(img) & mask).astype(np.float64) / 255.0


def _solarize(img, threshold):
    return np.where(img >= threshold, 1.0 - img, img)


def _affine(img, p):
    _, h, w = img.shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    xs = p[0] * xx + p[1] * yy + p[2]
    ys = p[3] * xx + p[4] * yy + p[5]
    js = np.floor(xs + cx + 0.5).astype(np.int64)
    is_ = np.floor(ys + cy + 0.5).astype(np.int64)
    valid = (js >= 0) & (js < w) & (is_ >= 0) & (is_ < h)
    out = np.zeros_like(img)
    out[:, valid] = img[:, is_[valid], js[valid]]
    return out


def apply_op(img, code, params):
    code = int(code)
    if code == AUTOCONTRAST:
        return _autocontrast(img)
    if code == EQUALIZE:
        return _equalize(img)
    if code == POSTERIZE:
        return _posterize(img, params[0])
    if code == SOLARIZE:
        return _solarize(img, params[0])
    if ROTATE <= code <= TRANSLATE_Y:
        return _affine(img, params)
    if code == IDENTITY:
        return img.copy()
    raise ValueError(f"unknown op code {code}")


def augmix_batch(X, nchains, weights, depth, ops, params, m):
    out = np.empty_like(X)
    for b in range(X.shape[0]):
        x = X[b]
        acc = np.zeros_like(x)
        for i in range(int(nchains[b])):
            cur = x
            for d in range(int(depth[b, i])):
                cur = apply_op(cur, ops[b, i, d], params[b, i, d])
            acc += weights[b, i] * cur
        out[b] = m[b] * x + (1.0 - m[b]) * acc
    np.clip(out, 0.0, 1.0, out=out)
    return out
