"""Parameterized building blocks: linear/norm layers, attention, SE gating.

Initialization follows the usual ViT recipe: truncated normal (std 0.02)
for projection weights, zeros for biases, ones/zeros for norm affines.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std).astype(dtype)


class Linear:
    """y = x @ W + b with W of shape [in, out]."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = Tensor(trunc_normal(rng, (in_dim, out_dim), dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        vec = x.ndim == 1
        if vec:
            x = ops.reshape(x, (1, x.shape[0]))
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"linear expects width {self.in_dim}, got input shape {x.shape}")
        y = ops.matmul(x, self.w)
        if self.b is not None:
            y = ops.add(y, self.b)
        return ops.reshape(y, (self.out_dim,)) if vec else y

    def params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class BatchNorm2d:
    """Per-channel batch norm over [C,H,W] maps with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, dtype=dtype))
        self.running_var = Tensor(np.ones(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, training, self.momentum, self.eps)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta),
                ("running_mean", self.running_mean), ("running_var", self.running_var)]


class MlpBlock:
    """Position-wise MLP: Linear -> activation -> Linear."""

    ACTIVATIONS = {"gelu": ops.gelu, "relu": ops.relu, "elu": ops.elu, "sigmoid": ops.sigmoid}

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 activation: str = "gelu", dtype=np.float32):
        if activation not in self.ACTIVATIONS:
            raise ConfigError(f"unknown activation '{activation}'")
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)
        self.act = self.ACTIVATIONS[activation]

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))

    def params(self):
        return _prefixed("fc1", self.fc1) + _prefixed("fc2", self.fc2)


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float | None = None) -> Tensor:
    """softmax(q @ k.T * scale) @ v over token rows."""
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError(f"attention expects 2-d operands, got {q.shape}/{k.shape}/{v.shape}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention q/k width mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention k/v row mismatch: {k.shape} vs {v.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    weights = ops.softmax(ops.mul(ops.matmul(q, k.T), scale), axis=-1)
    return ops.matmul(weights, v)


class AttentionHead:
    """Single-head self-attention projections (bias on the value path only)."""

    def __init__(self, d_in: int, d_head: int, rng: np.random.Generator, dtype=np.float32):
        self.wq = Tensor(trunc_normal(rng, (d_in, d_head), dtype=dtype), requires_grad=True)
        self.wk = Tensor(trunc_normal(rng, (d_in, d_head), dtype=dtype), requires_grad=True)
        self.wv = Tensor(trunc_normal(rng, (d_in, d_head), dtype=dtype), requires_grad=True)
        self.bv = Tensor(np.zeros(d_head, dtype=dtype), requires_grad=True)
        self.scale = 1.0 / math.sqrt(d_head)

    def __call__(self, x: Tensor) -> Tensor:
        q = ops.matmul(x, self.wq)
        k = ops.matmul(x, self.wk)
        v = ops.add(ops.matmul(x, self.wv), self.bv)
        return attention(q, k, v, self.scale)

    def params(self):
        return [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("bv", self.bv)]


class SEBlock:
    """Squeeze-and-excitation channel gate for [C,H,W] maps."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, dtype=np.float32):
        if channels % reduction != 0:
            raise ConfigError(f"SE channels {channels} not divisible by reduction {reduction}")
        self.channels = channels
        self.reduce = Linear(channels, channels // reduction, rng, dtype=dtype)
        self.expand = Linear(channels // reduction, channels, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise ShapeError(f"SE block expects [{self.channels},H,W], got {x.shape}")
        pooled = ops.reshape(ops.adaptive_avg_pool(x, (1, 1)), (self.channels,))
        gate = ops.sigmoid(self.expand(ops.relu(self.reduce(pooled))))
        return ops.mul(x, ops.reshape(gate, (self.channels, 1, 1)))

    def params(self):
        return _prefixed("reduce", self.reduce) + _prefixed("expand", self.expand)


def _prefixed(prefix: str, layer) -> list[tuple[str, Tensor]]:
    return [(f"{prefix}.{n}", t) for n, t in layer.params()]
