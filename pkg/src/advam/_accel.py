"""Hot inner loops, compiled with numba when available.

Set ``ADVAM_NO_NUMBA=1`` before import to force the pure-numpy path. Both
paths accumulate in the same order, so im2col/col2im results are bitwise
equal between them.
"""
import os

import numpy as np

_DISABLED = os.environ.get("ADVAM_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by ADVAM_NO_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def jit(func):
    if HAS_NUMBA:
        return numba.njit(cache=True)(func)
    return func


# numpy reference paths ---------------------------------------------------

def _im2col_numpy(xpad, kh, kw, sh, sw, ho, wo):
    n, c = xpad.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            slab = xpad[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
            cols[:, i, j] = slab.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im_numpy(cols, n, c, hp, wp, kh, kw, sh, sw, ho, wo):
    out = np.zeros((c, n, hp, wp))
    cols6 = cols.reshape(c, kh, kw, n, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += cols6[:, i, j]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _adam_numpy(theta, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# compiled paths ------------------------------------------------------------

@jit
def _im2col_numba(xpad, kh, kw, sh, sw, ho, wo):
    n, c = xpad.shape[0], xpad.shape[1]
    cols = np.empty((c * kh * kw, n * ho * wo))
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                for b in range(n):
                    base = b * ho * wo
                    for y in range(ho):
                        for x in range(wo):
                            cols[row, base + y * wo + x] = xpad[b, ci, i + y * sh, j + x * sw]
    return cols


@jit
def _col2im_numba(cols, n, c, hp, wp, kh, kw, sh, sw, ho, wo):
    out = np.zeros((n, c, hp, wp))
    # (i, j) outermost: every output cell sees its terms in the numpy order
    for i in range(kh):
        for j in range(kw):
            for ci in range(c):
                row = (ci * kh + i) * kw + j
                for b in range(n):
                    base = b * ho * wo
                    for y in range(ho):
                        for x in range(wo):
                            out[b, ci, i + y * sh, j + x * sw] += cols[row, base + y * wo + x]
    return out


@jit
def _adam_numba(theta, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    t = theta.reshape(theta.size)
    g = grad.reshape(grad.size)
    mm = m.reshape(m.size)
    vv = v.reshape(v.size)
    for k in range(t.size):
        gk = g[k]
        mm[k] = beta1 * mm[k] + (1.0 - beta1) * gk
        vv[k] = beta2 * vv[k] + (1.0 - beta2) * (gk * gk)
        t[k] -= lr * (mm[k] / bc1) / (np.sqrt(vv[k] / bc2) + eps)


if HAS_NUMBA:
    im2col = _im2col_numba
    col2im = _col2im_numba
    adam_update = _adam_numba
else:
    im2col = _im2col_numpy
    col2im = _col2im_numpy
    adam_update = _adam_numpy

BACKEND = "numba" if HAS_NUMBA else "numpy"
