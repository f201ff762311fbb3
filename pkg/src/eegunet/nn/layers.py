"""Parameter-holding layers built on the functional ops."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import NdArray, Param


class Module:
    """Minimal container: params, buffers and child modules found by attribute scan."""

    buffers: tuple[str, ...] = ()

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Param):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_params(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{path}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in self.buffers:
            yield f"{prefix}{key}", getattr(self, key)
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def assign_names(self, prefix: str = "") -> None:
        for name, p in self.named_params(prefix):
            p.name = name


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 padding: int | tuple[int, int] | str = "half", stride: int = 1):
        bound = math.sqrt(1.0 / (c_in * k))
        self.weight = Param(_uniform(rng, bound, (c_out, c_in, k)))
        self.bias = Param(_uniform(rng, bound, (c_out,)))
        if padding == "half":
            padding = k // 2
        elif padding == "same":
            # even kernels pad one less on the left so length is preserved
            padding = ((k - 1) // 2, k // 2)
        self.padding = padding
        self.stride = stride

    def __call__(self, x: NdArray) -> NdArray:
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm1d(Module):
    buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, eps: float = 1e-3, momentum: float = 0.1):
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=self.gamma.dtype)
        self.running_var = np.ones(channels, dtype=self.gamma.dtype)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: NdArray, train: bool = False) -> NdArray:
        return F.batchnorm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             train=train, eps=self.eps, momentum=self.momentum)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Param(np.ones(d))
        self.beta = Param(np.zeros(d))
        self.eps = eps

    def __call__(self, x: NdArray) -> NdArray:
        return F.layernorm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = math.sqrt(1.0 / d_in)
        self.weight = Param(_uniform(rng, bound, (d_in, d_out)))
        if bias:
            self.bias = Param(_uniform(rng, bound, (d_out,)))
        else:
            self.bias = None

    def __call__(self, x: NdArray) -> NdArray:
        return F.linear(x, self.weight, self.bias)


def positional_encoding(length: int, d_model: int, denom: int | None = None) -> np.ndarray:
    """Sinusoidal table of shape (length, d_model); ``denom`` defaults to d_model."""
    if d_model % 2:
        raise ValueError("positional_encoding: d_model must be even")
    denom = d_model if denom is None else denom
    pos = np.arange(length)[:, None]
    two_i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, two_i / denom)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


class AttentionWeights(Module):
    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        if num_heads < 1 or d_model % num_heads:
            raise ValueError(f"num_heads={num_heads} must divide d_model={d_model}")
        self.num_heads = num_heads
        self.d_k = d_model // num_heads
        bound = math.sqrt(1.0 / d_model)
        for name in ("q", "k", "v", "o"):
            setattr(self, f"W_{name}", Param(_uniform(rng, bound, (d_model, d_model))))
            setattr(self, f"b_{name}", Param(_uniform(rng, bound, (d_model,))))


def multi_head_attention(z: NdArray, w: AttentionWeights, return_attention: bool = False):
    """Unmasked scaled dot-product attention over tokens ``z`` of shape (T, d) or (B, T, d)."""
    squeeze = z.ndim == 2
    if squeeze:
        z = F.reshape(z, (1,) + z.shape)
    B, T, d = z.shape
    h, dk = w.num_heads, w.d_k

    def heads(t: NdArray) -> NdArray:
        return F.transpose(F.reshape(t, (B, T, h, dk)), (0, 2, 1, 3))

    q = heads(F.linear(z, w.W_q, w.b_q))
    k = heads(F.linear(z, w.W_k, w.b_k))
    v = heads(F.linear(z, w.W_v, w.b_v))
    logits = F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    F.check_finite(logits.data, "attention logits")
    attn = F.softmax(logits, axis=-1)
    ctx = F.reshape(F.transpose(F.matmul(attn, v), (0, 2, 1, 3)), (B, T, d))
    out = F.linear(ctx, w.W_o, w.b_o)
    if squeeze:
        out = F.reshape(out, (T, d))
    if return_attention:
        return out, attn.data
    return out


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer: LN(z + MHA(z)) then LN(z1 + FFN(z1))."""

    def __init__(self, d_model: int, num_heads: int, dim_ff: int, rng: np.random.Generator):
        self.attn = AttentionWeights(d_model, num_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, dim_ff, rng)
        self.ff2 = Linear(dim_ff, d_model, rng)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, z: NdArray, train: bool = False, dropout_rate: float = 0.0,
                 rng: np.random.Generator | None = None) -> NdArray:
        z1 = self.norm1(F.add(z, multi_head_attention(z, self.attn)))
        hidden = F.dropout(F.relu(self.ff1(z1)), dropout_rate, train, rng)
        return self.norm2(F.add(z1, self.ff2(hidden)))

    @staticmethod
    def param_count(d_model: int, dim_ff: int) -> int:
        return 4 * (d_model ** 2 + d_model) + 2 * d_model * dim_ff + dim_ff + d_model + 4 * d_model
