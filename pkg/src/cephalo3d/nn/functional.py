"""Stateless forward/backward kernels on numpy arrays.

Feature maps are laid out ``(channels, nx, ny, nz)``.  Each ``*_forward``
returns the output together with whatever the matching ``*_backward`` needs.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError, ShapeError

PROB_FLOOR = 1e-12


# -- convolution ---------------------------------------------------------------

def _check_conv(x, w):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be (C, nx, ny, nz), got shape {x.shape}")
    if w.ndim != 5:
        raise ShapeError(f"conv kernel must be (out, in, kx, ky, kz), got shape {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"kernel expects {w.shape[1]} input channels, input has {x.shape[0]}")
    if any(k % 2 == 0 for k in w.shape[2:]):
        raise ShapeError(f"kernel dims must be odd, got {w.shape[2:]}")


def im2col(x: np.ndarray, ksize) -> np.ndarray:
    """Zero-padded patch matrix of shape (C * kx * ky * kz, nx * ny * nz)."""
    c, nx, ny, nz = x.shape
    kx, ky, kz = ksize
    px, py, pz = kx // 2, ky // 2, kz // 2
    xp = np.pad(x, ((0, 0), (px, px), (py, py), (pz, pz)))
    cols = np.empty((c, kx, ky, kz, nx, ny, nz), dtype=x.dtype)
    for i in range(kx):
        for j in range(ky):
            for k in range(kz):
                cols[:, i, j, k] = xp[:, i:i + nx, j:j + ny, k:k + nz]
    return cols.reshape(c * kx * ky * kz, nx * ny * nz)


def col2im(cols: np.ndarray, x_shape, ksize) -> np.ndarray:
    c, nx, ny, nz = x_shape
    kx, ky, kz = ksize
    px, py, pz = kx // 2, ky // 2, kz // 2
    cols = cols.reshape(c, kx, ky, kz, nx, ny, nz)
    xp = np.zeros((c, nx + 2 * px, ny + 2 * py, nz + 2 * pz), dtype=cols.dtype)
    for i in range(kx):
        for j in range(ky):
            for k in range(kz):
                xp[:, i:i + nx, j:j + ny, k:k + nz] += cols[:, i, j, k]
    return xp[:, px:px + nx, py:py + ny, pz:pz + nz]


def conv3d_forward(x, w, b=None):
    """Same-size 3D cross-correlation with zero padding of (k - 1) / 2 per axis.

    Returns ``(out, cache)``.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    _check_conv(x, w)
    cout = w.shape[0]
    ksize = w.shape[2:]
    cols = im2col(x, ksize)
    out = w.reshape(cout, -1) @ cols
    if b is not None:
        out += np.asarray(b).reshape(cout, 1)
    return out.reshape((cout,) + x.shape[1:]), (x.shape, cols, w)


def conv3d_backward(dout, cache):
    """Returns ``(dx, dw, db)``."""
    x_shape, cols, w = cache
    cout = w.shape[0]
    d2 = dout.reshape(cout, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dcols = w.reshape(cout, -1).T @ d2
    dx = col2im(dcols, x_shape, w.shape[2:])
    return dx, dw, db


# -- maxout / pooling --------------------------------------------------------------

def maxout_forward(x, k: int = 2):
    """Channel-group max: ``out[c] = max(x[k*c], ..., x[k*c + k - 1])``."""
    if k < 2:
        raise InvalidArgumentError(f"maxout needs k >= 2, got {k}")
    if x.shape[0] % k:
        raise ShapeError(f"{x.shape[0]} channels not divisible by maxout k={k}")
    g = x.reshape((x.shape[0] // k, k) + x.shape[1:])
    idx = np.argmax(g, axis=1)[:, None]
    out = np.take_along_axis(g, idx, axis=1)[:, 0]
    return out, (x.shape, idx, k)


def maxout_backward(dout, cache):
    shape, idx, k = cache
    dg = np.zeros((shape[0] // k, k) + shape[1:], dtype=dout.dtype)
    np.put_along_axis(dg, idx, dout[:, None], axis=1)
    return dg.reshape(shape)


def maxpool_forward(x):
    """2x2x2 max pooling, stride 2; trailing odd slices are dropped."""
    c, nx, ny, nz = x.shape
    if min(nx, ny, nz) < 2:
        raise ShapeError(f"max-pool needs every spatial dim >= 2, got {(nx, ny, nz)}")
    ox, oy, oz = nx // 2, ny // 2, nz // 2
    xc = x[:, :2 * ox, :2 * oy, :2 * oz]
    win = xc.reshape(c, ox, 2, oy, 2, oz, 2).transpose(0, 1, 3, 5, 2, 4, 6).reshape(c, ox, oy, oz, 8)
    idx = np.argmax(win, axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool_backward(dout, cache):
    shape, idx = cache
    c, nx, ny, nz = shape
    ox, oy, oz = nx // 2, ny // 2, nz // 2
    dwin = np.zeros((c, ox, oy, oz, 8), dtype=dout.dtype)
    np.put_along_axis(dwin, idx, dout[..., None], axis=-1)
    dxc = dwin.reshape(c, ox, oy, oz, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6).reshape(c, 2 * ox, 2 * oy, 2 * oz)
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :2 * ox, :2 * oy, :2 * oz] = dxc
    return dx


# -- dense / softmax ---------------------------------------------------------------

def dense_forward(x, w, b=None):
    x = np.asarray(x)
    if x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"dense weight {w.shape} does not accept input of shape {x.shape}")
    out = w @ x
    if b is not None:
        out = out + b
    return out, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return w.T @ dout, np.outer(dout, x), dout.copy()


def softmax(v):
    v = np.asarray(v)
    e = np.exp(v - v.max())
    return e / e.sum()


def cross_entropy(p, t) -> float:
    """``-sum(t * ln p)`` with ``p`` floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} differ in shape")
    return float(-np.sum(t * np.log(np.maximum(p, PROB_FLOOR))))


def softmax_cross_entropy(logits, t):
    """Loss and gradient w.r.t. the logits; the gradient is ``p - t``."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    return cross_entropy(p, t), p - np.asarray(t, dtype=np.float64), p


# -- dropout -------------------------------------------------------------------------

def dropout_forward(x, rate: float, training: bool, rng=None):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask
