"""Minimal module containers and transformer building blocks."""
from __future__ import annotations

import copy
import math
from typing import Iterator

import numpy as np

from .numerics import Parameter, Tensor, ops

NEG_INF = -1e9


class Module:
    """Attribute-walking parameter container.

    Parameters are discovered in attribute-definition order, recursing into
    sub-modules and lists of sub-modules, and named by dotted path.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                name = prefix + key
                val.name = name
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix + key + ".")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters():
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing parameter {key!r}")
            arr = state[key]
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {key!r}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.set_trainable(False)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def clone(self) -> "Module":
        return copy.deepcopy(self)

    @property
    def dtype(self):
        return self.parameters()[0].dtype


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.weight = Parameter(_normal(rng, (n_in, n_out), 1.0 / math.sqrt(n_in)))
        self.bias = Parameter(np.zeros(n_out, np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(width, np.float32))
        self.beta = Parameter(np.zeros(width, np.float32))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_bias: np.ndarray | None = None):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes; returns (out, probs)."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    scores = ops.matmul(q, ops.swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    if key_bias is not None:
        scores = scores + Tensor(key_bias.astype(scores.dtype, copy=False))
    probs = ops.softmax(scores, axis=-1)
    return ops.matmul(probs, v), probs


class MultiHeadAttention(Module):
    """Multi-head self-attention over token tensors shaped (B, m, L, k).

    With ``cross_view`` the m views of each object are concatenated along
    the token axis inside every head, so attention spans m*L tokens with the
    same weights.  The key projection carries no bias: a key bias shifts a
    whole score row by a constant and cannot change the softmax.
    """

    def __init__(self, rng: np.random.Generator, width: int, heads: int):
        if width % heads:
            raise ValueError("width must be divisible by heads")
        self.heads = heads
        self.q = Linear(rng, width, width)
        self.k = Linear(rng, width, width, bias=False)
        self.v = Linear(rng, width, width)
        self.out = Linear(rng, width, width)

    def __call__(self, x: Tensor, cross_view: bool = False, key_bias=None, capture: list | None = None) -> Tensor:
        B, m, L, width = x.shape
        h = self.heads
        dk = width // h

        def heads(t: Tensor) -> Tensor:
            t = t.reshape(B, m, L, h, dk)
            if cross_view:
                return t.transpose(0, 3, 1, 2, 4).reshape(B, h, m * L, dk)
            return t.transpose(0, 1, 3, 2, 4)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        o, probs = scaled_dot_attention(q, k, v, key_bias)
        if capture is not None:
            capture.append(probs.data)
        if cross_view:
            o = o.reshape(B, h, m, L, dk).transpose(0, 2, 3, 1, 4)
        else:
            o = o.transpose(0, 1, 3, 2, 4)
        return self.out(o.reshape(B, m, L, width))


class MLP(Module):
    def __init__(self, rng: np.random.Generator, width: int, hidden: int):
        self.fc1 = Linear(rng, width, hidden)
        self.fc2 = Linear(rng, hidden, width)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int, mlp_ratio: int = 4):
        self.ln_1 = LayerNorm(width)
        self.attn = MultiHeadAttention(rng, width, heads)
        self.ln_2 = LayerNorm(width)
        self.mlp = MLP(rng, width, width * mlp_ratio)

    def __call__(self, x: Tensor, cross_view: bool = False, key_bias=None, capture=None) -> Tensor:
        x = x + self.attn(self.ln_1(x), cross_view, key_bias, capture)
        return x + self.mlp(self.ln_2(x))

    def attention_parameters(self) -> list[Parameter]:
        return self.attn.parameters()

    def mlp_parameters(self) -> list[Parameter]:
        return self.mlp.parameters()
