"""Forward/backward compute kernels over (C,H,W) tensors.

Tensors are plain numpy arrays in channel-major layout. All kernels are
pure; the convolution runs as im2col + BLAS matmul so both backends
(numba / pure numpy, see litedet.backend) give bitwise-identical output.

Layer pipeline order is conv -> batchnorm -> bias -> activation; the
conv kernels here therefore take no bias of their own unless one is
passed explicitly.
"""

from __future__ import annotations

import numpy as np

from litedet import backend
from litedet.ir import ActivationKind, LEAKY_SLOPE

BN_EPS = 1e-6


class ShapeMismatch(ValueError):
    pass


def conv2d(x, kernel, bias=None, stride=1, pad=0):
    """Cross-correlate kernel (F,C,k,k) with x (C,H,W), zero padding.

    out[f,y,x] = bias[f] + sum_{c,kh,kw} kernel[f,c,kh,kw] *
                 x[c, y*stride+kh-pad, x*stride+kw-pad]
    """
    f, kc, kh, kw = kernel.shape
    if kh != kw:
        raise ShapeMismatch("only square kernels supported")
    if x.ndim != 3 or x.shape[0] != kc:
        raise ShapeMismatch(f"input {x.shape} vs kernel in-channels {kc}")
    c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kh) // stride + 1
    cols = backend.im2col(x, kh, stride, pad)
    out = kernel.reshape(f, kc * kh * kw) @ cols
    if bias is not None:
        if len(bias) != f:
            raise ShapeMismatch(f"{len(bias)} biases for {f} filters")
        out += np.asarray(bias, dtype=out.dtype)[:, None]
    return out.reshape(f, oh, ow)


def conv2d_backward(dout, x, kernel, stride=1, pad=0):
    """Gradients of conv2d: returns (dx, dkernel, dbias)."""
    f, kc, k, _ = kernel.shape
    if dout.shape[0] != f:
        raise ShapeMismatch(f"upstream channels {dout.shape[0]} vs filters {f}")
    if x.shape[0] != kc:
        raise ShapeMismatch(f"input channels {x.shape[0]} vs kernel {kc}")
    dout_mat = dout.reshape(f, -1)
    cols = backend.im2col(x, k, stride, pad)
    dkernel = (dout_mat @ cols.T).reshape(kernel.shape)
    dbias = dout_mat.sum(axis=1)
    dcols = kernel.reshape(f, -1).T @ dout_mat
    dx = backend.col2im(dcols, x.shape, k, stride, pad)
    return dx, dkernel, dbias


def maxpool2d(x, size, stride=1, pad=0):
    """Max pool with trailing-edge (bottom/right) padding.

    Returns (out, argmax) where argmax holds the flat input index of the
    winning cell per output cell; padded cells never win, ties go to the
    smallest flat index.
    """
    c, h, w = x.shape
    if size > h + pad or size > w + pad:
        raise ShapeMismatch(f"pool size {size} exceeds padded input {h}x{w}")
    return backend.maxpool(x, size, stride, pad)


def maxpool2d_backward(dout, argmax, in_shape):
    """Route upstream gradient to the recorded argmax cells."""
    if dout.shape != argmax.shape:
        raise ShapeMismatch(f"grad {dout.shape} vs argmax {argmax.shape}")
    return backend.maxpool_backward(dout, argmax, in_shape)


def activate(x, kind: ActivationKind):
    if kind is ActivationKind.LEAKY:
        return np.where(x > 0, x, x * x.dtype.type(LEAKY_SLOPE))
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0)
    return x


def activate_backward(dout, pre, kind: ActivationKind):
    """Gradient through the activation, given the pre-activation values."""
    if dout.shape != pre.shape:
        raise ShapeMismatch(f"grad {dout.shape} vs pre-activation {pre.shape}")
    if kind is ActivationKind.LEAKY:
        return np.where(pre > 0, dout, dout * dout.dtype.type(LEAKY_SLOPE))
    if kind is ActivationKind.RELU:
        return np.where(pre > 0, dout, 0)
    return dout


def batchnorm_infer(x, scales, means, variances, eps=BN_EPS):
    """Per-channel y = scale * (x - mean) / sqrt(var + eps).

    The bias/shift is applied afterwards by the layer pipeline.
    """
    c = x.shape[0]
    scales = np.asarray(scales, dtype=x.dtype)
    means = np.asarray(means, dtype=x.dtype)
    variances = np.asarray(variances, dtype=x.dtype)
    if not (len(scales) == len(means) == len(variances) == c):
        raise ShapeMismatch(f"BN parameter lengths vs {c} channels")
    if np.any(variances < 0):
        raise ValueError("negative variance")
    inv = scales / np.sqrt(variances + x.dtype.type(eps))
    return (x - means[:, None, None]) * inv[:, None, None]
