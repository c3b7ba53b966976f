"""Backend selection for the hot kernels.

The im2col/col2im gathers and the max-pool loops are numba-jitted by
default. Setting the environment variable LITEDET_NO_NUMBA=1 (or
LITEDET_BACKEND=numpy) before import selects the pure-numpy fallback,
which produces identical results. `litedet bench --compare-backends`
measures both on the same network.

The matrix multiply at the heart of the convolution goes through
numpy's BLAS in both modes, so the two backends agree bitwise.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_requested() -> bool:
    if os.environ.get("LITEDET_NO_NUMBA", "") not in ("", "0"):
        return False
    if os.environ.get("LITEDET_BACKEND", "").lower() == "numpy":
        return False
    return True


USE_NUMBA = False
if _numba_requested():
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:
        USE_NUMBA = False


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure-numpy kernels

def _im2col_numpy(x, size, stride, pad):
    """Gather conv windows: (C,H,W) -> (C*size*size, OH*OW)."""
    c, h, w = x.shape
    oh = (h + 2 * pad - size) // stride + 1
    ow = (w + 2 * pad - size) // stride + 1
    if pad > 0:
        xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((c, size, size, oh, ow), dtype=x.dtype)
    for kh in range(size):
        for kw in range(size):
            cols[:, kh, kw] = xp[:, kh:kh + oh * stride:stride,
                                 kw:kw + ow * stride:stride]
    return cols.reshape(c * size * size, oh * ow)


def _col2im_numpy(cols, in_shape, size, stride, pad):
    """Scatter-add transpose of _im2col_numpy."""
    c, h, w = in_shape
    oh = (h + 2 * pad - size) // stride + 1
    ow = (w + 2 * pad - size) // stride + 1
    cols = cols.reshape(c, size, size, oh, ow)
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for kh in range(size):
        for kw in range(size):
            xp[:, kh:kh + oh * stride:stride,
               kw:kw + ow * stride:stride] += cols[:, kh, kw]
    if pad > 0:
        return xp[:, pad:pad + h, pad:pad + w].copy()
    return xp


def _maxpool_numpy(x, size, stride, pad):
    """Trailing-edge padded max pool. Returns (out, argmax flat indices).

    Padded cells are -inf and never win; ties go to the smallest flat
    index of the unpadded input (first occurrence in row-major window
    order).
    """
    c, h, w = x.shape
    oh = (h + pad - size) // stride + 1
    ow = (w + pad - size) // stride + 1
    if pad > 0:
        xp = np.full((c, h + pad, w + pad), -np.inf, dtype=x.dtype)
        xp[:, :h, :w] = x
    else:
        xp = x
    windows = np.empty((size * size, c, oh, ow), dtype=x.dtype)
    for kh in range(size):
        for kw in range(size):
            windows[kh * size + kw] = xp[:, kh:kh + oh * stride:stride,
                                         kw:kw + ow * stride:stride]
    k_idx = np.argmax(windows, axis=0)
    out = np.take_along_axis(windows, k_idx[None], axis=0)[0]
    kh = k_idx // size
    kw = k_idx % size
    oy = np.arange(oh)[None, :, None]
    ox = np.arange(ow)[None, None, :]
    cc = np.arange(c)[:, None, None]
    argmax = cc * (h * w) + (oy * stride + kh) * w + (ox * stride + kw)
    return np.ascontiguousarray(out), argmax.astype(np.int64)


def _maxpool_backward_numpy(dout, argmax, in_shape):
    dx = np.zeros(int(np.prod(in_shape)), dtype=dout.dtype)
    np.add.at(dx, argmax.ravel(), dout.ravel())
    return dx.reshape(in_shape)


# ---------------------------------------------------------------------------
# numba kernels

if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _im2col_jit(x, size, stride, pad, cols):
        c, h, w = x.shape
        n_cols = cols.shape[1]
        oh = (h + 2 * pad - size) // stride + 1
        ow = n_cols // oh
        for ci in range(c):
            for kh in range(size):
                for kw in range(size):
                    row = (ci * size + kh) * size + kw
                    for oy in range(oh):
                        iy = oy * stride + kh - pad
                        for ox in range(ow):
                            ix = ox * stride + kw - pad
                            if 0 <= iy < h and 0 <= ix < w:
                                cols[row, oy * ow + ox] = x[ci, iy, ix]
                            else:
                                cols[row, oy * ow + ox] = 0.0

    @njit(cache=True)
    def _col2im_jit(cols, size, stride, pad, dx):
        c, h, w = dx.shape
        n_cols = cols.shape[1]
        oh = (h + 2 * pad - size) // stride + 1
        ow = n_cols // oh
        for ci in range(c):
            for kh in range(size):
                for kw in range(size):
                    row = (ci * size + kh) * size + kw
                    for oy in range(oh):
                        iy = oy * stride + kh - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + kw - pad
                            if 0 <= ix < w:
                                dx[ci, iy, ix] += cols[row, oy * ow + ox]

    @njit(cache=True)
    def _maxpool_jit(x, size, stride, pad, out, argmax):
        c, h, w = x.shape
        oh, ow = out.shape[1], out.shape[2]
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    best = -np.inf
                    best_idx = -1
                    for kh in range(size):
                        iy = oy * stride + kh
                        if iy >= h:
                            continue
                        for kw in range(size):
                            ix = ox * stride + kw
                            if ix >= w:
                                continue
                            v = x[ci, iy, ix]
                            if v > best:
                                best = v
                                best_idx = ci * h * w + iy * w + ix
                    out[ci, oy, ox] = best
                    argmax[ci, oy, ox] = best_idx

    @njit(cache=True)
    def _maxpool_bwd_jit(dout, argmax, dx_flat):
        n = dout.size
        d = dout.ravel()
        a = argmax.ravel()
        for i in range(n):
            dx_flat[a[i]] += d[i]


def im2col(x, size, stride, pad):
    if USE_NUMBA:
        c, h, w = x.shape
        oh = (h + 2 * pad - size) // stride + 1
        ow = (w + 2 * pad - size) // stride + 1
        cols = np.empty((c * size * size, oh * ow), dtype=x.dtype)
        _im2col_jit(x, size, stride, pad, cols)
        return cols
    return _im2col_numpy(x, size, stride, pad)


def col2im(cols, in_shape, size, stride, pad):
    if USE_NUMBA:
        dx = np.zeros(in_shape, dtype=cols.dtype)
        _col2im_jit(np.ascontiguousarray(cols), size, stride, pad, dx)
        return dx
    return _col2im_numpy(cols, in_shape, size, stride, pad)


def maxpool(x, size, stride, pad):
    if USE_NUMBA:
        c, h, w = x.shape
        oh = (h + pad - size) // stride + 1
        ow = (w + pad - size) // stride + 1
        out = np.empty((c, oh, ow), dtype=x.dtype)
        argmax = np.empty((c, oh, ow), dtype=np.int64)
        _maxpool_jit(x, size, stride, pad, out, argmax)
        return out, argmax
    return _maxpool_numpy(x, size, stride, pad)


def maxpool_backward(dout, argmax, in_shape):
    if USE_NUMBA:
        dx = np.zeros(int(np.prod(in_shape)), dtype=dout.dtype)
        _maxpool_bwd_jit(np.ascontiguousarray(dout), argmax, dx)
        return dx.reshape(in_shape)
    return _maxpool_backward_numpy(dout, argmax, in_shape)
