"""Dense reference kernels: matrix product, im2col convolution, ReLU,
batch normalization and a central-difference Jacobian.

Everything runs in float64 on NCHW arrays. Matrices are plain 2-D
``ndarray`` values and support masks are boolean 2-D arrays.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyInputError, ShapeError

__all__ = [
    "matmul",
    "im2col",
    "col2im",
    "conv2d",
    "conv2d_forward",
    "conv2d_backward",
    "conv_output_size",
    "relu",
    "relu_backward",
    "BatchNormState",
    "batchnorm_forward",
    "batchnorm_backward",
    "batchnorm",
    "finite_difference_jacobian",
    "rel_error",
]


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def im2col(x, kernel_h, kernel_w, stride=1, pad=0):
    """Unroll every receptive field of ``x``.

    Returns an array of shape ``(n, c, kernel_h, kernel_w, out_h, out_w)``;
    flattening axes 1..3 gives rows ordered channel-major, then kernel row,
    then kernel column, which is the layout of a conv weight row.
    """
    n, c, h, w = x.shape
    if stride < 1 or pad < 0:
        raise ConfigError(f"stride must be >= 1 and pad >= 0, got {stride}, {pad}")
    if kernel_h > h + 2 * pad or kernel_w > w + 2 * pad:
        raise ShapeError(
            f"kernel {kernel_h}x{kernel_w} larger than padded input "
            f"{h + 2 * pad}x{w + 2 * pad}"
        )
    if kernel_h == kernel_w == 1 and pad == 0:
        return np.ascontiguousarray(x[:, :, None, None, ::stride, ::stride])
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel_h, kernel_w), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


def col2im(cols, input_shape, stride=1, pad=0):
    """Adjoint of :func:`im2col`: scatter-add patches back onto the input grid."""
    n, c, h, w = input_shape
    _, _, kh, kw, oh, ow = cols.shape
    if kh == kw == stride == 1 and pad == 0:
        return cols.reshape(n, c, h, w)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def _check_conv_args(x, weight, kernel_h, kernel_w, groups):
    if x.ndim != 4:
        raise ShapeError(f"expected an NCHW tensor, got shape {x.shape}")
    c = x.shape[1]
    if groups < 1 or c % groups:
        raise ConfigError(f"{c} input channels not divisible by {groups} groups")
    c_out = weight.shape[0]
    if c_out % groups:
        raise ConfigError(f"{c_out} output channels not divisible by {groups} groups")
    expected = (c // groups) * kernel_h * kernel_w
    if weight.ndim != 2 or weight.shape[1] != expected:
        raise ShapeError(
            f"weight shape {weight.shape} does not match "
            f"({c_out}, {expected}) for {c} channels in {groups} groups"
        )


def conv2d_forward(x, weight, kernel_h, kernel_w, stride=1, pad=0, groups=1):
    """Grouped 2-D convolution via im2col + batched matmul.

    ``weight`` has shape ``(c_out, (c_in // groups) * kernel_h * kernel_w)``;
    rows ``g * c_out/groups ...`` belong to group ``g`` and only see input
    channels of that group. Returns ``(output, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    _check_conv_args(x, weight, kernel_h, kernel_w, groups)
    n, c, h, w = x.shape
    c_out = weight.shape[0]
    cols = im2col(x, kernel_h, kernel_w, stride, pad)
    oh, ow = cols.shape[4], cols.shape[5]
    gcols = cols.reshape(n, groups, -1, oh * ow)
    gw = weight.reshape(groups, c_out // groups, -1)
    out = np.matmul(gw[None], gcols).reshape(n, c_out, oh, ow)
    cache = (x.shape, cols, weight, kernel_h, kernel_w, stride, pad, groups)
    return out, cache


def conv2d_backward(dout, cache):
    """Return ``(dx, dweight)`` for the convolution that produced ``cache``."""
    x_shape, cols, weight, kh, kw, stride, pad, groups = cache
    n = x_shape[0]
    c_out = weight.shape[0]
    oh, ow = cols.shape[4], cols.shape[5]
    gd = dout.reshape(n, groups, c_out // groups, oh * ow)
    gcols = cols.reshape(n, groups, -1, oh * ow)
    dw = np.einsum("ngol,ngkl->gok", gd, gcols).reshape(weight.shape)
    gw = weight.reshape(groups, c_out // groups, -1)
    dcols = np.matmul(gw.transpose(0, 2, 1)[None], gd).reshape(cols.shape)
    dx = col2im(dcols, x_shape, stride, pad)
    return dx, dw


def conv2d(x, weight, kernel_h, kernel_w, stride=1, pad=0, groups=1):
    return conv2d_forward(x, weight, kernel_h, kernel_w, stride, pad, groups)[0]


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    return np.where(x > 0, upstream, 0.0)


@dataclass(frozen=True)
class BatchNormState:
    """Running per-channel statistics."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, channels):
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm_forward(x, scale, shift, state, mode="train", eps=1e-5, momentum=0.1):
    """Per-channel batch normalization over (n, h, w).

    Returns ``(y, cache, new_state)``. In train mode ``new_state`` blends the
    batch statistics into the running ones with weight ``momentum``; the
    input ``state`` is never modified.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[1]
    for name, arr in (("scale", scale), ("shift", shift), ("mean", state.mean), ("var", state.var)):
        if np.shape(arr) != (c,):
            raise ShapeError(f"{name} has shape {np.shape(arr)}, expected ({c},)")
    if x.shape[0] * x.shape[2] * x.shape[3] == 0:
        raise EmptyInputError("batchnorm needs at least one value per channel")

    if mode == "train":
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        new_state = BatchNormState(
            (1 - momentum) * state.mean + momentum * mu,
            (1 - momentum) * state.var + momentum * var,
        )
    else:
        mu, var = state.mean, state.var
        new_state = state
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    y = xhat * scale[None, :, None, None] + shift[None, :, None, None]
    cache = (mode, xhat, inv_std, np.asarray(scale, dtype=np.float64))
    return y, cache, new_state


def batchnorm_backward(dy, cache):
    """Return ``(dx, dscale, dshift)``."""
    mode, xhat, inv_std, scale = cache
    dshift = dy.sum(axis=(0, 2, 3))
    dscale = (dy * xhat).sum(axis=(0, 2, 3))
    dxhat = dy * scale[None, :, None, None]
    if mode == "eval":
        return dxhat * inv_std[None, :, None, None], dscale, dshift
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    dx = (
        inv_std[None, :, None, None] / m
        * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        )
    )
    return dx, dscale, dshift


def batchnorm(x, scale, shift, state, mode="train", eps=1e-5, momentum=0.1):
    y, _, new_state = batchnorm_forward(x, scale, shift, state, mode, eps, momentum)
    return y, new_state


def finite_difference_jacobian(f, x, eps=1e-5):
    """Central-difference Jacobian of ``f`` at the 1-D point ``x``.

    Row ``i`` holds derivatives of output ``i``; column ``j`` perturbs
    ``x[j]`` by ``+-eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    f0 = np.atleast_1d(np.asarray(f(x.copy()), dtype=np.float64)).ravel()
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xp[j] += eps
        xm = x.copy()
        xm[j] -= eps
        fp = np.atleast_1d(np.asarray(f(xp), dtype=np.float64)).ravel()
        fm = np.atleast_1d(np.asarray(f(xm), dtype=np.float64)).ravel()
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise FloatingPointError(f"non-finite function value while perturbing coordinate {j}")
        jac[:, j] = (fp - fm) / (2 * eps)
    return jac


def rel_error(a, b):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)`` (0 when both vanish)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
