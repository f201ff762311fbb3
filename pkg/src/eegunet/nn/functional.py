"""Differentiable primitives.

Sequence ops take channel-major input, ``(C, L)`` or ``(B, C, L)``. Every op
returns an :class:`NdArray`; gradient closures skip inputs that do not require
grads.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import NdArray, NonFiniteError, record

__all__ = [
    "add", "sub", "mul", "matmul", "transpose", "reshape", "sum_all", "mean_all",
    "conv1d", "maxpool1d", "upsample_nearest", "elu", "relu", "sigmoid", "softmax",
    "batchnorm1d", "layernorm", "dropout", "spatial_dropout", "linear",
    "check_finite",
]


def _wrap(x, like: NdArray | None = None) -> NdArray:
    if isinstance(x, NdArray):
        return x
    dtype = like.dtype if like is not None else None
    return NdArray(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


def _batched(fn):
    """Lift a (B, C, L) op to also accept (C, L)."""

    def wrapper(x, *args, **kwargs):
        if x.ndim == 2:
            out = fn(reshape(x, (1,) + x.shape), *args, **kwargs)
            return reshape(out, out.shape[1:])
        return fn(x, *args, **kwargs)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ----------------------------------------------------------------- elementwise

def add(a, b) -> NdArray:
    a, b = _wrap(a, b if isinstance(b, NdArray) else None), _wrap(b, a if isinstance(a, NdArray) else None)
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> NdArray:
    a, b = _wrap(a, b if isinstance(b, NdArray) else None), _wrap(b, a if isinstance(a, NdArray) else None)
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> NdArray:
    a, b = _wrap(a, b if isinstance(b, NdArray) else None), _wrap(b, a if isinstance(a, NdArray) else None)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), back)


def matmul(a: NdArray, b: NdArray) -> NdArray:
    """Batched matrix product over the last two axes (numpy broadcasting rules)."""
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), back)


def transpose(x: NdArray, axes: tuple[int, ...]) -> NdArray:
    inv = np.argsort(axes)
    return record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x: NdArray, shape: tuple[int, ...]) -> NdArray:
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def sum_all(x: NdArray) -> NdArray:
    return record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: NdArray) -> NdArray:
    n = x.size
    return record(np.asarray(x.data.mean()), (x,),
                  lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


# ---------------------------------------------------------------- convolution

@_batched
def conv1d(x: NdArray, weight: NdArray, bias: NdArray | None = None,
           stride: int = 1, padding: int | tuple[int, int] = 0) -> NdArray:
    """Cross-correlation of ``x`` (B, C_in, L) with ``weight`` (C_out, C_in, k).

    ``padding`` is symmetric zero padding, or a ``(left, right)`` pair.
    """
    B, C, L = x.shape
    O, Cw, k = weight.shape
    if Cw != C:
        raise ValueError(f"conv1d: input has {C} channels but weight expects {Cw}")
    if stride < 1:
        raise ValueError("conv1d: stride must be >= 1")
    pl, pr = (padding, padding) if isinstance(padding, int) else padding
    Lp = L + pl + pr
    if Lp < k:
        raise ValueError(f"conv1d: padded length {Lp} shorter than kernel {k}")
    L_out = (Lp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else x.data
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # (B, C, L_out, k)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B, C * k, L_out)
    wmat = weight.data.reshape(O, C * k)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]

    def back(g):
        gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape) \
            if weight.requires_grad else None
        gb = g.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g).reshape(B, C, k, L_out)
            dxp = np.zeros((B, C, Lp), dtype=g.dtype)
            span = stride * (L_out - 1) + 1
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, :, j, :]
            gx = dxp[:, :, pl:pl + L]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, inputs, back)


@_batched
def maxpool1d(x: NdArray, k: int = 2, stride: int | None = None) -> NdArray:
    """Max over sliding windows; gradient goes to the first maximum of each window."""
    stride = k if stride is None else stride
    B, C, L = x.shape
    if k > L:
        raise ValueError(f"maxpool1d: kernel {k} longer than input {L}")
    win = sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    L_out = out.shape[-1]

    def back(g):
        pos = np.arange(L_out) * stride + arg
        gx = np.zeros(x.shape, dtype=g.dtype)
        if stride >= k:
            np.put_along_axis(gx, pos, g, axis=2)
        else:
            bi, ci = np.indices(pos.shape[:2])
            np.add.at(gx, (bi[..., None], ci[..., None], pos), g)
        return (gx,)

    return record(np.ascontiguousarray(out), (x,), back)


def upsample_nearest(x: NdArray, scale: int = 2) -> NdArray:
    if scale < 1:
        raise ValueError("upsample_nearest: scale must be >= 1")
    if scale == 1:
        return x
    L = x.shape[-1]
    return record(np.repeat(x.data, scale, axis=-1), (x,),
                  lambda g: (g.reshape(g.shape[:-1] + (L, scale)).sum(axis=-1),))


# ---------------------------------------------------------------- activations

def elu(x: NdArray, alpha: float = 1.0) -> NdArray:
    pos = x.data >= 0
    out = np.where(pos, x.data, alpha * np.expm1(np.minimum(x.data, 0)))
    return record(out, (x,), lambda g: (np.where(pos, g, g * (out + alpha)),))


def relu(x: NdArray) -> NdArray:
    pos = x.data > 0
    return record(x.data * pos, (x,), lambda g: (g * pos,))


def sigmoid(x: NdArray) -> NdArray:
    s = expit(x.data)
    return record(s, (x,), lambda g: (g * s * (1 - s),))


def softmax(x: NdArray, axis: int = -1) -> NdArray:
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    return record(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


# ------------------------------------------------------------- normalization

@_batched
def batchnorm1d(x: NdArray, gamma: NdArray, beta: NdArray,
                running_mean: np.ndarray, running_var: np.ndarray,
                train: bool = False, eps: float = 1e-3, momentum: float = 0.1) -> NdArray:
    """Per-channel normalization of (B, C, L) over batch and time.

    Train mode uses biased batch variance for normalization and folds the
    unbiased estimate into the running statistics in place.
    """
    B, C, L = x.shape
    n = B * L
    if train:
        if n < 2:
            raise ValueError("batchnorm1d: train mode needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[:, None]) * inv[:, None]
    out = xhat * gamma.data[:, None] + beta.data[:, None]

    def back(g):
        gg = (g * xhat).sum(axis=(0, 2))
        gbeta = g.sum(axis=(0, 2))
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data[:, None]
            if train:
                gx = (inv[:, None] / n) * (
                    n * dxhat
                    - dxhat.sum(axis=(0, 2))[:, None]
                    - xhat * (dxhat * xhat).sum(axis=(0, 2))[:, None]
                )
            else:
                gx = dxhat * inv[:, None]
        return gx, gg, gbeta

    return record(out, (x, gamma, beta), back)


def layernorm(x: NdArray, gamma: NdArray, beta: NdArray, eps: float = 1e-5) -> NdArray:
    d = x.shape[-1]
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = (inv / d) * (d * dxhat - dxhat.sum(-1, keepdims=True)
                              - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return gx, gg, gbeta

    return record(out, (x, gamma, beta), back)


# -------------------------------------------------------------------- dropout

def _check_rate(rate: float) -> None:
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")


def dropout(x: NdArray, rate: float, train: bool, rng: np.random.Generator | None = None) -> NdArray:
    _check_rate(rate)
    if not train or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return record(x.data * keep, (x,), lambda g: (g * keep,))


def spatial_dropout(x: NdArray, rate: float, train: bool, rng: np.random.Generator | None = None) -> NdArray:
    """Drop whole channels of a (..., C, L) array."""
    _check_rate(rate)
    if not train or rate == 0:
        return x
    if rng is None:
        raise ValueError("spatial_dropout in train mode needs an rng")
    keep = (rng.random(x.shape[:-1] + (1,)) >= rate).astype(x.dtype) / (1 - rate)
    return record(x.data * keep, (x,), lambda g: (g * keep,))


# --------------------------------------------------------------------- linear

def linear(x: NdArray, weight: NdArray, bias: NdArray | None = None) -> NdArray:
    """Affine map over the last axis; ``weight`` is (d_in, d_out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2 if weight.requires_grad else None
        gx = g @ weight.data.T if x.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, inputs, back)
