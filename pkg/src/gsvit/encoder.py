"""GSViT encoder: patch embedding, class token, sandwich blocks with
cascaded group attention, and staged patch merging.

Stage widths may be rescaled per stage (the "reallocation" multipliers),
so capacity can be shifted toward the stages that need it without
touching the block structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import AttentionHead, LayerNorm, Linear, MlpBlock, _prefixed, trunc_normal
from .tensor import Tensor


@dataclass
class ModelConfig:
    """Hyperparameters defining one encoder instance."""

    resolution: int = 224
    patch_size: int = 16
    in_channels: int = 3
    widths: tuple[int, ...] = (64, 128, 192)
    blocks: tuple[int, ...] = (1, 2, 3)
    heads: tuple[int, ...] = (2, 4, 4)
    mlps_per_side: int = 2
    mlp_ratio: float = 2.0
    width_mults: tuple[float, ...] = (1.0, 1.0, 1.0)
    latent_dim: int = 192

    def __post_init__(self):
        self.validate()

    @property
    def stages(self) -> int:
        return len(self.widths)

    @property
    def effective_widths(self) -> tuple[int, ...]:
        return tuple(int(round(w * m)) for w, m in zip(self.widths, self.width_mults))

    @property
    def grid(self) -> int:
        return self.resolution // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    def mlp_hidden(self, width: int) -> int:
        return max(1, int(round(width * self.mlp_ratio)))

    def validate(self) -> None:
        if self.resolution <= 0 or self.patch_size <= 0:
            raise ConfigError("resolution and patch_size must be positive")
        if self.resolution % self.patch_size != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by patch size {self.patch_size}")
        n = self.stages
        if n == 0:
            raise ConfigError("at least one stage is required")
        if not (len(self.blocks) == len(self.heads) == len(self.width_mults) == n):
            raise ConfigError("widths, blocks, heads, width_mults must have equal length")
        if self.mlps_per_side < 0:
            raise ConfigError("mlps_per_side must be >= 0")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")
        for i, (w, h, b) in enumerate(zip(self.effective_widths, self.heads, self.blocks)):
            if w <= 0 or h <= 0 or b < 0:
                raise ConfigError(f"stage {i}: widths/heads must be positive, blocks >= 0")
            if w % h != 0:
                raise ConfigError(f"stage {i}: width {w} not divisible by {h} heads")
        if self.latent_dim != self.effective_widths[-1]:
            raise ConfigError(
                f"latent_dim {self.latent_dim} must equal final stage width {self.effective_widths[-1]}")


class PatchEmbedder:
    """Flatten raster-order patches (row, col, channel) and project to width d."""

    def __init__(self, patch_size: int, in_channels: int, dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.patch_size = patch_size
        self.in_channels = in_channels
        self.proj = Linear(patch_size * patch_size * in_channels, dim, rng, dtype=dtype)

    def __call__(self, image: Tensor) -> Tensor:
        p = self.patch_size
        if image.ndim != 3 or image.shape[0] != self.in_channels:
            raise ShapeError(
                f"patch_embed expects [{self.in_channels},H,W] image, got {image.shape}")
        c, h, w = image.shape
        if h % p != 0 or w % p != 0:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        gh, gw = h // p, w // p
        x = ops.reshape(image, (c, gh, p, gw, p))
        x = ops.transpose(x, (1, 3, 2, 4, 0))          # [gh, gw, p, p, c]
        return self.proj(ops.reshape(x, (gh * gw, p * p * c)))

    def params(self):
        return _prefixed("proj", self.proj)


class CGALayer:
    """Cascaded group attention over h channel splits.

    Head 1 attends over its split; head j > 1 attends over its split plus
    the previous head's output; head outputs are concatenated and mixed by
    an output projection.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads != 0:
            raise ConfigError(f"CGA width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.num_heads = heads
        d_split = dim // heads
        self.heads = [AttentionHead(d_split, d_split, rng, dtype=dtype) for _ in range(heads)]
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"CGA expects [N,{self.dim}] tokens, got {x.shape}")
        splits = ops.split(x, self.num_heads, axis=1)
        outs = []
        prev = None
        for head, piece in zip(self.heads, splits):
            if prev is not None:
                piece = ops.add(piece, prev)
            prev = head(piece)
            outs.append(prev)
        return self.proj(ops.concat(outs, axis=1))

    def params(self):
        out = []
        for j, head in enumerate(self.heads):
            out += _prefixed(f"head{j}", head)
        return out + _prefixed("proj", self.proj)


class SandwichBlock:
    """N_f residual MLPs, one residual CGA, N_f residual MLPs (pre-norm)."""

    def __init__(self, dim: int, heads: int, n_mlp: int, hidden: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.pre_norms = [LayerNorm(dim, dtype=dtype) for _ in range(n_mlp)]
        self.pre_mlps = [MlpBlock(dim, hidden, rng, dtype=dtype) for _ in range(n_mlp)]
        self.attn_norm = LayerNorm(dim, dtype=dtype)
        self.attn = CGALayer(dim, heads, rng, dtype=dtype)
        self.post_norms = [LayerNorm(dim, dtype=dtype) for _ in range(n_mlp)]
        self.post_mlps = [MlpBlock(dim, hidden, rng, dtype=dtype) for _ in range(n_mlp)]

    def __call__(self, x: Tensor) -> Tensor:
        for norm, mlp in zip(self.pre_norms, self.pre_mlps):
            x = ops.add(x, mlp(norm(x)))
        x = ops.add(x, self.attn(self.attn_norm(x)))
        for norm, mlp in zip(self.post_norms, self.post_mlps):
            x = ops.add(x, mlp(norm(x)))
        return x

    def params(self):
        out = []
        for i, (norm, mlp) in enumerate(zip(self.pre_norms, self.pre_mlps)):
            out += _prefixed(f"pre{i}.norm", norm) + _prefixed(f"pre{i}.mlp", mlp)
        out += _prefixed("attn_norm", self.attn_norm) + _prefixed("attn", self.attn)
        for i, (norm, mlp) in enumerate(zip(self.post_norms, self.post_mlps)):
            out += _prefixed(f"post{i}.norm", norm) + _prefixed(f"post{i}.mlp", mlp)
        return out


class PatchMerge:
    """2x2 token-grid concat + linear, halving the grid and changing width.

    Odd grids are zero-padded to even before grouping. The class token is
    carried across the width change by its own projection.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.in_dim = in_dim
        self.merge = Linear(4 * in_dim, out_dim, rng, dtype=dtype)
        self.class_proj = Linear(in_dim, out_dim, rng, dtype=dtype)

    def __call__(self, tokens: Tensor, gh: int, gw: int) -> tuple[Tensor, int, int]:
        cls = ops.narrow(tokens, 0, 0, 1)
        grid = ops.reshape(ops.narrow(tokens, 0, 1, gh * gw), (gh, gw, self.in_dim))
        ph, pw = gh % 2, gw % 2
        if ph or pw:
            grid = ops.pad(grid, [(0, ph), (0, pw), (0, 0)])
        nh, nw = (gh + ph) // 2, (gw + pw) // 2
        grid = ops.reshape(grid, (nh, 2, nw, 2, self.in_dim))
        grid = ops.transpose(grid, (0, 2, 1, 3, 4))
        merged = self.merge(ops.reshape(grid, (nh * nw, 4 * self.in_dim)))
        return ops.concat([self.class_proj(cls), merged], axis=0), nh, nw

    def params(self):
        return _prefixed("merge", self.merge) + _prefixed("class_proj", self.class_proj)


class Encoder:
    """Image -> latent vector (final class-token row by default)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0,
                 dtype=np.float32, readout: str = "class"):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.Generator(np.random.PCG64(int(rng)))
        if readout not in ("class", "mean"):
            raise ConfigError(f"unknown readout '{readout}'")
        cfg.validate()
        self.cfg = cfg
        self.readout = readout
        widths = cfg.effective_widths
        self.embedder = PatchEmbedder(cfg.patch_size, cfg.in_channels, widths[0], rng, dtype=dtype)
        self.class_token = Tensor(
            trunc_normal(rng, (widths[0],), dtype=dtype), requires_grad=True)
        self.pos_embed = Tensor(
            trunc_normal(rng, (cfg.tokens + 1, widths[0]), dtype=dtype), requires_grad=True)
        self.stages: list[list[SandwichBlock]] = []
        self.merges: list[PatchMerge] = []
        for i, (w, h, b) in enumerate(zip(widths, cfg.heads, cfg.blocks)):
            self.stages.append(
                [SandwichBlock(w, h, cfg.mlps_per_side, cfg.mlp_hidden(w), rng, dtype=dtype)
                 for _ in range(b)])
            if i + 1 < len(widths):
                self.merges.append(PatchMerge(w, widths[i + 1], rng, dtype=dtype))
        self.final_norm = LayerNorm(widths[-1], dtype=dtype)

    def forward_tokens(self, image: Tensor) -> Tensor:
        cfg = self.cfg
        if image.shape != (cfg.in_channels, cfg.resolution, cfg.resolution):
            raise ShapeError(
                f"encoder configured for {cfg.in_channels}x{cfg.resolution}x{cfg.resolution} "
                f"input, got {image.shape}")
        tokens = self.embedder(image)
        cls = ops.reshape(self.class_token, (1, self.class_token.shape[0]))
        x = ops.add(ops.concat([cls, tokens], axis=0), self.pos_embed)
        gh = gw = cfg.grid
        for i, blocks in enumerate(self.stages):
            for block in blocks:
                x = block(x)
            if i < len(self.merges):
                x, gh, gw = self.merges[i](x, gh, gw)
        return self.final_norm(x)

    def encode(self, image: Tensor) -> Tensor:
        tokens = self.forward_tokens(image)
        if self.readout == "mean":
            return ops.mean(tokens, axis=0)
        return ops.reshape(ops.narrow(tokens, 0, 0, 1), (tokens.shape[1],))

    def params(self) -> list[tuple[str, Tensor]]:
        out = [("class_token", self.class_token), ("pos_embed", self.pos_embed)]
        out += _prefixed("patch", self.embedder)
        for i, blocks in enumerate(self.stages):
            for j, block in enumerate(blocks):
                out += _prefixed(f"stage{i}.block{j}", block)
            if i < len(self.merges):
                out += _prefixed(f"merge{i}", self.merges[i])
        return out + _prefixed("final_norm", self.final_norm)

    def freeze(self) -> None:
        for _, t in self.params():
            t.requires_grad = False


def count_params(cfg: ModelConfig) -> tuple[int, int]:
    """(total, tunable) element counts for an encoder built from cfg."""
    enc = Encoder(cfg, rng=0)
    total = sum(t.size for _, t in enc.params())
    tunable = sum(t.size for _, t in enc.params() if t.requires_grad)
    return total, tunable
