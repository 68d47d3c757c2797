"""Small layer toolkit on top of :mod:`duin.tensor`."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Holds parameters and child modules; names are dotted paths."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        T.zero_grad(self.parameters())


def uniform_init(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(d_in)
        self.weight = T.parameter(uniform_init(rng, (d_in, d_out), bound))
        self.bias = T.parameter(uniform_init(rng, (d_out,), bound)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.DimensionError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y

    def zero_(self) -> None:
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class MLP(Module):
    """Stack of Linear layers with ReLU between them.

    ``final_activation`` applies ReLU after the last layer too, which is what
    the representation MLPs want (their last width is a hidden size).
    """

    def __init__(self, d_in: int, sizes: Sequence[int], rng: np.random.Generator,
                 final_activation: bool = False):
        dims = [d_in, *sizes]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = T.relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(dim))
        self.beta = T.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = T.mean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = T.mean(xc * xc, axis=-1, keepdims=True)
        return xc / T.sqrt(var + self.eps) * self.gamma + self.beta


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """[B, L, D] -> [B, H, L, D/H]"""
    b, length, d = x.shape
    return T.transpose(x.reshape(b, length, n_heads, d // n_heads), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B, H, L, Dh] -> [B, L, H*Dh]"""
    b, h, length, dh = x.shape
    return T.transpose(x, (0, 2, 1, 3)).reshape(b, length, h * dh)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None):
    """softmax(q kᵀ / sqrt(d_head)) v over the last two axes.

    ``key_mask`` is boolean, broadcastable to [..., 1, L_k]; masked keys get
    zero weight.  Returns the attended values and the weights.
    """
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * scale
    weights = T.softmax(scores, axis=-1, mask=key_mask)
    return T.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head attention with separate query/key/value/output projections."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 bias: bool = True, d_query: int | None = None):
        if d_model % n_heads:
            raise T.DimensionError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.wq = Linear(d_query or d_model, d_model, rng, bias)
        self.wk = Linear(d_model, d_model, rng, bias)
        self.wv = Linear(d_model, d_model, rng, bias)
        self.wo = Linear(d_model, d_model, rng, bias)

    def __call__(self, query: Tensor, keys: Tensor, values: Tensor,
                 key_mask: np.ndarray | None = None) -> Tensor:
        """query [B, Lq, Dq], keys/values [B, Lk, D], key_mask [B, Lk] -> [B, Lq, D]"""
        q = split_heads(self.wq(query), self.n_heads)
        k = split_heads(self.wk(keys), self.n_heads)
        v = split_heads(self.wv(values), self.n_heads)
        mask = None if key_mask is None else key_mask[:, None, None, :]
        out, _ = scaled_dot_attention(q, k, v, mask)
        return self.wo(merge_heads(out))
