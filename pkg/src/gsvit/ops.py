"""Differentiable tensor operations.

Every op computes its forward value eagerly with numpy and records a
backward rule on the ambient tape (see gsvit.tensor). Convolutions are
lowered to im2col + matmul so one optimized primitive carries the heavy
work; the transposed convolution is its exact col2im dual.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NumericsError, ShapeError
from .tensor import Tensor, grad_enabled, record

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def _coerce(x, like: np.ndarray | None = None):
    """Return (ndarray value, Tensor-or-None) for a Tensor / array / scalar operand."""
    if isinstance(x, Tensor):
        return x.data, x
    dtype = like.dtype if like is not None else np.float32
    return np.asarray(x, dtype=dtype), None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _requires(*tensors) -> bool:
    return grad_enabled() and any(t is not None and t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    ad, at = _coerce(a)
    bd, bt = _coerce(b, like=ad)
    out = Tensor(ad + bd, requires_grad=_requires(at, bt))

    def bw(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    record(out, (at, bt), bw)
    return out


def sub(a, b) -> Tensor:
    ad, at = _coerce(a)
    bd, bt = _coerce(b, like=ad)
    out = Tensor(ad - bd, requires_grad=_requires(at, bt))

    def bw(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)

    record(out, (at, bt), bw)
    return out


def mul(a, b) -> Tensor:
    ad, at = _coerce(a)
    bd, bt = _coerce(b, like=ad)
    out = Tensor(ad * bd, requires_grad=_requires(at, bt))

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    record(out, (at, bt), bw)
    return out


def matmul(a, b) -> Tensor:
    ad, at = _coerce(a)
    bd, bt = _coerce(b, like=ad)
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd, requires_grad=_requires(at, bt))

    def bw(g):
        return g @ bd.T, ad.T @ g

    record(out, (at, bt), bw)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)
    src_shape = x.data.shape

    def bw(g):
        return (g.reshape(src_shape),)

    record(out, (x,), bw)
    return out


def transpose(x: Tensor, axes=None) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.transpose(x.data, axes)), requires_grad=x.requires_grad)
    inv = None if axes is None else np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    record(out, (x,), bw)
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(np.ascontiguousarray(x.data[idx]), requires_grad=x.requires_grad)
    src_shape = x.data.shape

    def bw(g):
        full = np.zeros(src_shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    record(out, (x,), bw)
    return out


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into `sections` equal parts along `axis`."""
    n = x.shape[axis]
    if n % sections != 0:
        raise ShapeError(f"cannot split axis of size {n} into {sections} equal parts")
    step = n // sections
    return [narrow(x, axis, i * step, step) for i in range(sections)]


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), requires_grad=_requires(*tensors))
    sizes = [d.shape[axis] for d in datas]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    record(out, tuple(tensors), bw)
    return out


def pad(x: Tensor, pad_width) -> Tensor:
    """Constant zero padding; pad_width is a per-axis (before, after) list."""
    pad_width = [tuple(p) for p in pad_width]
    out = Tensor(np.pad(x.data, pad_width), requires_grad=x.requires_grad)
    idx = tuple(slice(b, b + n) for (b, _), n in zip(pad_width, x.data.shape))

    def bw(g):
        return (np.ascontiguousarray(g[idx]),)

    record(out, (x,), bw)
    return out


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    out = Tensor(out_data, requires_grad=x.requires_grad)
    src_shape = x.data.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, src_shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src_shape).copy(),)

    record(out, (x,), bw)
    return out


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= x.shape[a]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    record(out, (x,), bw)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = Tensor(xd * cdf, requires_grad=x.requires_grad)

    def bw(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        return (g * (cdf + xd * pdf),)

    record(out, (x,), bw)
    return out


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xd = x.data
    neg = alpha * np.expm1(np.minimum(xd, 0))
    out = Tensor(np.where(xd > 0, xd, neg), requires_grad=x.requires_grad)

    def bw(g):
        return (g * np.where(xd > 0, np.ones_like(xd), neg + alpha),)

    record(out, (x,), bw)
    return out


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    s = np.empty_like(xd)
    pos = xd >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s, requires_grad=x.requires_grad)

    def bw(g):
        return (g * s * (1.0 - s),)

    record(out, (x,), bw)
    return out


def abs_(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data), requires_grad=x.requires_grad)
    sign = np.sign(x.data)

    def bw(g):
        return (g * sign,)

    record(out, (x,), bw)
    return out


# ---------------------------------------------------------------------------
# normalizers


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericsError("softmax received NaN input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, requires_grad=x.requires_grad)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    record(out, (x,), bw)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor(xhat * gamma.data + beta.data, requires_grad=_requires(x, gamma, beta))

    def bw(g):
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    record(out, (x, gamma, beta), bw)
    return out


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Channel-wise batch normalization over a [C,H,W] feature map.

    Train mode normalizes with the current map's per-channel spatial
    statistics and folds them into the running estimates; eval mode uses
    the running estimates.
    """
    if eps <= 0:
        raise ConfigError(f"batch_norm eps must be positive, got {eps}")
    if x.ndim != 3:
        raise ShapeError(f"batch_norm expects a [C,H,W] map, got shape {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm affine shapes {gamma.shape}/{beta.shape} do not match channels {c}")
    ga = gamma.data.reshape(c, 1, 1)
    be = beta.data.reshape(c, 1, 1)

    if training:
        mu = x.data.mean(axis=(1, 2), keepdims=True)
        var = x.data.var(axis=(1, 2), keepdims=True)
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mu.reshape(c)
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * var.reshape(c)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        out = Tensor(xhat * ga + be, requires_grad=_requires(x, gamma, beta))

        def bw(g):
            dxhat = g * ga
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=(1, 2), keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
            )
            return dx, (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    else:
        inv_std = (1.0 / np.sqrt(running_var.data + eps)).reshape(c, 1, 1)
        xhat = (x.data - running_mean.data.reshape(c, 1, 1)) * inv_std
        out = Tensor(xhat * ga + be, requires_grad=_requires(x, gamma, beta))

        def bw(g):
            return g * ga * inv_std, (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    record(out, (x, gamma, beta), bw)
    return out


# ---------------------------------------------------------------------------
# regularization


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0,1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype)
    scale = 1.0 / (1.0 - p)
    out = Tensor(x.data * keep * scale, requires_grad=x.requires_grad)

    def bw(g):
        return (g * keep * scale,)

    record(out, (x,), bw)
    return out


# ---------------------------------------------------------------------------
# convolution via im2col / col2im


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """[C,H,W] -> [(C*kh*kw), (oh*ow)] patch matrix."""
    c, h, w = x.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, kh, kw, oh, ow), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, ki, kj] = xp[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
    return cols.reshape(c * kh * kw, oh * ow), oh, ow


def _col2im(cols, c, out_h, out_w, kh, kw, stride, padding, grid_h, grid_w):
    """Adjoint of _im2col: scatter-add a patch matrix back to a [C,H,W] map."""
    buf = np.zeros((c, out_h + 2 * padding, out_w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(c, kh, kw, grid_h, grid_w)
    for ki in range(kh):
        for kj in range(kw):
            buf[:, ki : ki + stride * grid_h : stride, kj : kj + stride * grid_w : stride] += cols[:, ki, kj]
    return np.ascontiguousarray(buf[:, padding : padding + out_h, padding : padding + out_w])


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """[C,H,W] * [O,C,kh,kw] -> [O,oh,ow]."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}")
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} exceeds padded input {x.shape} (pad={padding})")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    wmat = w.data.reshape(o, -1)
    y = wmat @ cols
    if b is not None:
        y = y + b.data[:, None]
    out = Tensor(y.reshape(o, oh, ow), requires_grad=_requires(x, w, b))

    def bw(g):
        gm = g.reshape(o, -1)
        gw = (gm @ cols.T).reshape(w.shape)
        gx = _col2im(wmat.T @ gm, c, h, wd, kh, kw, stride, padding, oh, ow)
        gb = gm.sum(axis=1) if b is not None else None
        return gx, gw, gb

    record(out, (x, w, b), bw)
    return out


def conv2d_transposed(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """[C,H,W] * [C,O,kh,kw] -> [O, (H-1)*stride - 2*padding + kh, ...]."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[0]:
        raise ShapeError(f"conv2d_transposed shape mismatch: input {x.shape}, weight {w.shape}")
    c, h, wd = x.shape
    _, o, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wd - 1) * stride - 2 * padding + kw
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d_transposed produces empty output {oh}x{ow} from {x.shape}")
    wmat = w.data.reshape(c, o * kh * kw)
    xmat = x.data.reshape(c, h * wd)
    y = _col2im(wmat.T @ xmat, o, oh, ow, kh, kw, stride, padding, h, wd)
    if b is not None:
        y = y + b.data[:, None, None]
    out = Tensor(y, requires_grad=_requires(x, w, b))

    def bw(g):
        gcols, gh, gw_ = _im2col(g, kh, kw, stride, padding)
        assert (gh, gw_) == (h, wd)
        gx = (wmat @ gcols).reshape(c, h, wd)
        gweight = (xmat @ gcols.T).reshape(w.shape)
        gb = g.sum(axis=(1, 2)) if b is not None else None
        return gx, gweight, gb

    record(out, (x, w, b), bw)
    return out


def adaptive_avg_pool(x: Tensor, out_hw: tuple[int, int] = (1, 1)) -> Tensor:
    """Average-pool a [C,H,W] map to [C,oh,ow] with torch-style bin edges."""
    if x.ndim != 3:
        raise ShapeError(f"adaptive_avg_pool expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    oh, ow = out_hw
    ys = [(i * h // oh, -(-(i + 1) * h // oh)) for i in range(oh)]
    xs = [(j * w // ow, -(-(j + 1) * w // ow)) for j in range(ow)]
    y = np.empty((c, oh, ow), dtype=x.data.dtype)
    for i, (y0, y1) in enumerate(ys):
        for j, (x0, x1) in enumerate(xs):
            y[:, i, j] = x.data[:, y0:y1, x0:x1].mean(axis=(1, 2))
    out = Tensor(y, requires_grad=x.requires_grad)

    def bw(g):
        gx = np.zeros((c, h, w), dtype=g.dtype)
        for i, (y0, y1) in enumerate(ys):
            for j, (x0, x1) in enumerate(xs):
                gx[:, y0:y1, x0:x1] += g[:, i : i + 1, j : j + 1] / ((y1 - y0) * (x1 - x0))
        return (gx,)

    record(out, (x,), bw)
    return out


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class ids [B]."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B,K] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    bsz, k = logits.shape
    if labels.shape != (bsz,):
        raise ShapeError(f"cross_entropy labels shape {labels.shape} does not match batch {bsz}")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"cross_entropy label out of range [0,{k})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(denom)
    loss = -logp[np.arange(bsz), labels].mean()
    out = Tensor(np.asarray(loss, dtype=z.dtype), requires_grad=logits.requires_grad)

    def bw(g):
        grad = e / denom
        grad[np.arange(bsz), labels] -= 1.0
        return (grad * (g / bsz),)

    record(out, (logits,), bw)
    return out
