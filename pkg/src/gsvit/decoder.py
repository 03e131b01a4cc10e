"""Asymmetric reconstruction decoder.

A fully connected expansion seeds a small feature map, then a ladder of
transposed convolutions (each followed by batch norm and ReLU) upscales to
the target frame. SE-gated residual connections refine features at exactly
two configured scales; the final stage emits sigmoid pixels in (0,1).
The decoder exists only for next-frame pre-training and is detached
afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, DataError, ShapeError
from .layers import BatchNorm2d, Linear, SEBlock, _prefixed, trunc_normal
from .tensor import Tensor


@dataclass
class DecoderConfig:
    latent_dim: int = 192
    seed_channels: int = 256
    seed_hw: int = 7
    channels: tuple[int, ...] = (128, 64, 32, 16, 3)
    kernels: tuple[int, ...] = (4, 4, 4, 4, 4)
    strides: tuple[int, ...] = (2, 2, 2, 2, 2)
    pads: tuple[int, ...] = (1, 1, 1, 1, 1)
    se_scales: tuple[int, int] = (56, 112)
    out_channels: int = 3
    resolution: int = 224
    se_reduction: int = 4

    def __post_init__(self):
        self.validate()

    def stage_sizes(self) -> list[int]:
        """Spatial size after each deconv stage, from the seed map."""
        sizes = []
        s = self.seed_hw
        for k, st, p in zip(self.kernels, self.strides, self.pads):
            s = (s - 1) * st - 2 * p + k
            sizes.append(s)
        return sizes

    def validate(self) -> None:
        n = len(self.channels)
        if n == 0:
            raise ConfigError("decoder needs at least one deconv stage")
        if not (len(self.kernels) == len(self.strides) == len(self.pads) == n):
            raise ConfigError("decoder channels/kernels/strides/pads must have equal length")
        if self.latent_dim <= 0 or self.seed_channels <= 0 or self.seed_hw <= 0:
            raise ConfigError("decoder latent_dim, seed_channels, seed_hw must be positive")
        if self.channels[-1] != self.out_channels:
            raise ConfigError(
                f"final deconv emits {self.channels[-1]} channels, expected {self.out_channels}")
        sizes = self.stage_sizes()
        if any(s < 1 for s in sizes):
            raise ConfigError(f"deconv ladder collapses to empty map: sizes {sizes}")
        if sizes[-1] != self.resolution:
            raise ConfigError(
                f"deconv ladder reaches {sizes[-1]}, configured resolution is {self.resolution}")
        if len(self.se_scales) != 2:
            raise ConfigError(f"exactly two SE scales required, got {self.se_scales}")
        for scale in self.se_scales:
            if scale not in sizes[:-1]:
                raise ConfigError(
                    f"SE scale {scale} does not match any intermediate stage size {sizes[:-1]}")
        if len(set(self.se_scales)) != 2:
            raise ConfigError("SE scales must be distinct")


class Decoder:
    """latent [d] -> frame [3,H,W]; FC+BN+GELU seed, deconv/BN/ReLU ladder."""

    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator | int = 0, dtype=np.float32):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.Generator(np.random.PCG64(int(rng)))
        cfg.validate()
        self.cfg = cfg
        c0, hw = cfg.seed_channels, cfg.seed_hw
        self.fc = Linear(cfg.latent_dim, c0 * hw * hw, rng, dtype=dtype)
        self.seed_norm = BatchNorm2d(c0, dtype=dtype)
        sizes = cfg.stage_sizes()
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.norms: list[BatchNorm2d | None] = []
        self.se_blocks: dict[int, SEBlock] = {}
        c_in = c0
        last = len(cfg.channels) - 1
        for i, (c_out, k) in enumerate(zip(cfg.channels, cfg.kernels)):
            self.weights.append(
                Tensor(trunc_normal(rng, (c_in, c_out, k, k), dtype=dtype), requires_grad=True))
            self.biases.append(Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True))
            self.norms.append(BatchNorm2d(c_out, dtype=dtype) if i != last else None)
            if i != last and sizes[i] in cfg.se_scales:
                self.se_blocks[i] = SEBlock(c_out, rng, reduction=cfg.se_reduction, dtype=dtype)
            c_in = c_out

    def __call__(self, latent: Tensor, training: bool = False) -> Tensor:
        cfg = self.cfg
        if latent.shape != (cfg.latent_dim,):
            raise ShapeError(f"decoder expects latent of shape ({cfg.latent_dim},), got {latent.shape}")
        x = ops.reshape(self.fc(latent), (cfg.seed_channels, cfg.seed_hw, cfg.seed_hw))
        x = ops.gelu(self.seed_norm(x, training))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = ops.conv2d_transposed(x, w, b, stride=cfg.strides[i], padding=cfg.pads[i])
            if i == last:
                return ops.sigmoid(x)
            x = ops.relu(self.norms[i](x, training))
            se = self.se_blocks.get(i)
            if se is not None:
                x = ops.add(x, se(x))
        raise AssertionError("unreachable")

    def params(self) -> list[tuple[str, Tensor]]:
        out = _prefixed("fc", self.fc) + _prefixed("seed_norm", self.seed_norm)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"deconv{i}.w", w), (f"deconv{i}.b", b)]
            if self.norms[i] is not None:
                out += _prefixed(f"deconv{i}.norm", self.norms[i])
            if i in self.se_blocks:
                out += _prefixed(f"deconv{i}.se", self.se_blocks[i])
        return out


def reconstruction_loss(pred: Tensor, target: Tensor, kind: str = "mse") -> Tensor:
    """Mean pixel reconstruction error; `kind` is 'mse' or 'l1'."""
    if pred.shape != target.shape:
        raise ShapeError(f"reconstruction_loss shape mismatch: {pred.shape} vs {target.shape}")
    tmin, tmax = float(target.data.min()), float(target.data.max())
    if tmin < 0.0 or tmax > 1.0:
        raise DataError(f"reconstruction target outside [0,1]: range [{tmin}, {tmax}]")
    diff = ops.sub(pred, target)
    if kind == "mse":
        return ops.mean(ops.mul(diff, diff))
    if kind == "l1":
        return ops.mean(ops.abs_(diff))
    raise ConfigError(f"unknown reconstruction loss '{kind}'")
