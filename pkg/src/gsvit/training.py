"""Training loops: next-frame pre-training, procedure fine-tuning, and
phase-head training on a frozen encoder, plus augmentation and metrics.

Every loop is deterministic for a fixed seed: parameter init, batch
order, augmentation draws, and dropout masks all derive from one seed
tree, so identical seeds produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .checkpoint import (Checkpoint, checkpoint_from_params, restore_params,
                         weight_checksum)
from .config import Config, config_to_text, parse_config
from .corpus import NUM_PHASES, FrameCorpus, Video
from .decoder import Decoder, reconstruction_loss
from .encoder import Encoder
from .errors import ConfigError, DataError, NumericsError
from .layers import LayerNorm, Linear, _prefixed
from .tensor import Tensor, backward, no_grad


def second_gap(fps: float) -> int:
    """Frame-index gap corresponding to one second (round half up)."""
    return int(math.floor(fps + 0.5))


@dataclass
class FramePair:
    """Input frame at time t paired with the frame one second later."""

    video: Video
    input_idx: int
    target_idx: int

    @property
    def input_frame(self) -> np.ndarray:
        return self.video.frame(self.input_idx)

    @property
    def target_frame(self) -> np.ndarray:
        return self.video.frame(self.target_idx)


def build_frame_pairs(video: Video) -> list[FramePair]:
    if video.fps is None or video.fps <= 0:
        raise DataError(f"{video.name}: missing or invalid fps")
    gap = second_gap(video.fps)
    n = video.num_frames
    return [FramePair(video, i, i + gap) for i in range(n - gap)]


def corpus_frame_pairs(corpus: FrameCorpus) -> list[FramePair]:
    pairs: list[FramePair] = []
    for video in corpus.videos:
        pairs.extend(build_frame_pairs(video))
    return pairs


class Adam:
    """Adam with per-parameter moment accumulators and an adjustable lr."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [(n, t) for n, t in named_params if t.requires_grad]
        self.lr = lr
        self.base_lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in self.params}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def exp_decay_lr(base_lr: float, gamma: float, epoch: int) -> float:
    return base_lr * gamma ** epoch


@dataclass
class TrainReport:
    kind: str
    seed: int
    steps: int
    losses: list[float] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    config_text: str = ""


def _check_finite(loss_value: float, step: int, lr: float) -> None:
    if not math.isfinite(loss_value):
        raise NumericsError(f"non-finite loss {loss_value} at step {step} (lr={lr:g})")


def _model_params(encoder: Encoder, decoder: Decoder) -> list[tuple[str, Tensor]]:
    return ([(f"encoder.{n}", t) for n, t in encoder.params()]
            + [(f"decoder.{n}", t) for n, t in decoder.params()])


def _reconstruction_step(encoder, decoder, pairs, idx, loss_kind):
    loss = None
    for i in idx:
        pair = pairs[i]
        latent = encoder.encode(Tensor(pair.input_frame))
        pred = decoder(latent, training=True)
        term = reconstruction_loss(pred, Tensor(pair.target_frame), kind=loss_kind)
        loss = term if loss is None else ops.add(loss, term)
    return ops.mul(loss, 1.0 / len(idx))


def init_models(config: Config, seed: int) -> tuple[Encoder, Decoder]:
    """Seed-deterministic encoder/decoder initialization (shared with pretrain)."""
    init_ss = np.random.SeedSequence(seed).spawn(2)[0]
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    encoder = Encoder(config.encoder, init_rng)
    decoder = Decoder(config.decoder, init_rng)
    return encoder, decoder


def pretrain(corpus: FrameCorpus, config: Config, steps: int, seed: int,
             ) -> tuple[Checkpoint, TrainReport]:
    """Next-frame pre-training: minimize recon loss of decode(encode(x_t)) vs x_{t+1s}."""
    pairs = corpus_frame_pairs(corpus)
    if not pairs:
        raise DataError("corpus yields no frame pairs (videos shorter than one second?)")
    encoder, decoder = init_models(config, seed)
    order_ss = np.random.SeedSequence(seed).spawn(2)[1]
    order_rng = np.random.Generator(np.random.PCG64(order_ss))
    params = _model_params(encoder, decoder)
    lr = config.train.lr_for("pretrain")
    opt = Adam(params, lr, config.train.beta1, config.train.beta2, config.train.eps)
    batch = min(config.train.batch, len(pairs))

    report = TrainReport(kind="pretrain", seed=seed, steps=steps, config_text=config_to_text(config))
    for step in range(steps):
        t0 = time.perf_counter()
        idx = order_rng.integers(0, len(pairs), size=batch)
        loss = _reconstruction_step(encoder, decoder, pairs, idx, config.train.loss)
        loss_value = float(loss.data)
        _check_finite(loss_value, step, lr)
        backward(loss)
        opt.step()
        opt.zero_grad()
        report.losses.append(loss_value)
        report.step_seconds.append(time.perf_counter() - t0)
    if report.losses:
        report.metrics["initial_loss"] = report.losses[0]
        report.metrics["final_loss"] = report.losses[-1]
    return checkpoint_from_params(params, config_to_text(config)), report


def finetune(ckpt: Checkpoint, corpus: FrameCorpus, procedure: str, seed: int,
             config: Config | None = None) -> tuple[Checkpoint, TrainReport]:
    """One epoch of next-frame training restricted to one procedure tag."""
    config = config if config is not None else parse_config(ckpt.config_text, "<checkpoint>")
    filtered = corpus.by_procedure(procedure)
    if not filtered.videos:
        raise DataError(
            f"no videos tagged procedure '{procedure}' (available: {corpus.procedures()})")
    pairs = corpus_frame_pairs(filtered)
    if not pairs:
        raise DataError(f"procedure '{procedure}' videos yield no frame pairs")

    encoder = Encoder(config.encoder, 0)
    decoder = Decoder(config.decoder, 0)
    params = _model_params(encoder, decoder)
    restore_params(ckpt, params)
    lr = config.train.lr_for("finetune")
    opt = Adam(params, lr, config.train.beta1, config.train.beta2, config.train.eps)
    order_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    order = order_rng.permutation(len(pairs))
    batch = min(config.train.batch, len(pairs))

    report = TrainReport(kind="finetune", seed=seed, steps=0, config_text=config_to_text(config))
    for start in range(0, len(order), batch):
        idx = order[start : start + batch]
        t0 = time.perf_counter()
        loss = _reconstruction_step(encoder, decoder, pairs, idx, config.train.loss)
        loss_value = float(loss.data)
        _check_finite(loss_value, report.steps, lr)
        backward(loss)
        opt.step()
        opt.zero_grad()
        report.losses.append(loss_value)
        report.step_seconds.append(time.perf_counter() - t0)
        report.steps += 1
    report.metrics["initial_loss"] = report.losses[0]
    report.metrics["final_loss"] = report.losses[-1]
    return checkpoint_from_params(params, config_to_text(config)), report


class PhaseHead:
    """Classifier head: 2048 and 512 hidden neurons (ELU + LayerNorm +
    train-time dropout on each), then a 7-way output layer."""

    HIDDEN = (2048, 512)

    def __init__(self, latent_dim: int, rng: np.random.Generator | int = 0,
                 dropout: float = 0.10, dtype=np.float32):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.Generator(np.random.PCG64(int(rng)))
        h1, h2 = self.HIDDEN
        self.dropout_p = dropout
        self.fc1 = Linear(latent_dim, h1, rng, dtype=dtype)
        self.norm1 = LayerNorm(h1, dtype=dtype)
        self.fc2 = Linear(h1, h2, rng, dtype=dtype)
        self.norm2 = LayerNorm(h2, dtype=dtype)
        self.out = Linear(h2, NUM_PHASES, rng, dtype=dtype)

    def __call__(self, latents: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        if training and rng is None:
            raise ConfigError("PhaseHead training mode needs an rng for dropout")
        x = self.norm1(ops.elu(self.fc1(latents)))
        if training:
            x = ops.dropout(x, self.dropout_p, training, rng)
        x = self.norm2(ops.elu(self.fc2(x)))
        if training:
            x = ops.dropout(x, self.dropout_p, training, rng)
        return self.out(x)

    def params(self) -> list[tuple[str, Tensor]]:
        return (_prefixed("fc1", self.fc1) + _prefixed("norm1", self.norm1)
                + _prefixed("fc2", self.fc2) + _prefixed("norm2", self.norm2)
                + _prefixed("out", self.out))


@dataclass
class AugmentRanges:
    brightness: float = 0.2
    contrast: tuple[float, float] = (0.8, 1.25)
    saturation: tuple[float, float] = (0.8, 1.25)
    blur_prob: float = 0.5
    blur_sigma_max: float = 1.5
    blur_kernel: int = 5

    @staticmethod
    def from_config(cfg: Config) -> "AugmentRanges":
        t = cfg.train
        return AugmentRanges(t.aug_brightness, t.aug_contrast, t.aug_saturation,
                             t.aug_blur_prob, t.aug_blur_sigma_max)


_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def _gaussian_blur(img: np.ndarray, sigma: float, k: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; identity as sigma -> 0."""
    if sigma < 1e-6:
        return img
    r = k // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    kern = np.exp(-0.5 * (xs / sigma) ** 2)
    kern = (kern / kern.sum()).astype(img.dtype)
    padded = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for i in range(k):
        out += kern[i] * padded[:, i : i + img.shape[1], :]
    padded = np.pad(out, ((0, 0), (0, 0), (r, r)), mode="reflect")
    out = np.zeros_like(img)
    for i in range(k):
        out += kern[i] * padded[:, :, i : i + img.shape[2]]
    return out


def augment(frame: Tensor, rng: np.random.Generator,
            ranges: AugmentRanges = AugmentRanges()) -> Tensor:
    """Photometric jitter plus optional Gaussian blur, clamped to [0,1].

    Draw order is fixed: brightness delta, contrast factor, saturation
    factor, blur coin, blur sigma (sigma is drawn even when the coin says
    no blur, so the rng stream is position-independent).
    """
    x = frame.data.astype(np.float32, copy=True)
    b = rng.uniform(-ranges.brightness, ranges.brightness)
    c = rng.uniform(*ranges.contrast)
    s = rng.uniform(*ranges.saturation)
    coin = rng.uniform(0.0, 1.0)
    sigma = rng.uniform(0.0, ranges.blur_sigma_max)

    x = x + b
    gray = np.tensordot(_LUMA, x, axes=(0, 0))          # [H,W]
    x = gray.mean() + (x - gray.mean()) * c
    gray = np.tensordot(_LUMA, x, axes=(0, 0))
    x = gray[None, :, :] + (x - gray[None, :, :]) * s
    if coin < ranges.blur_prob:
        x = _gaussian_blur(x, sigma, ranges.blur_kernel)
    return Tensor(np.clip(x, 0.0, 1.0))


def _labeled_items(corpus: FrameCorpus) -> list[tuple[Video, int, int]]:
    items = []
    for video in corpus.videos:
        for idx in sorted(video.labels):
            phase = video.labels[idx]
            if not 0 <= phase < NUM_PHASES:
                raise DataError(f"{video.frame_path(idx)}: phase id {phase} outside [0,{NUM_PHASES})")
            items.append((video, idx, phase))
    return items


def _encode_batch(encoder: Encoder, frames: list[np.ndarray]) -> Tensor:
    with no_grad():
        latents = [encoder.encode(Tensor(f)).data for f in frames]
    return Tensor(np.stack(latents))


def train_phase(encoder_ckpt: Checkpoint, corpus: FrameCorpus, config: Config | None,
                epochs: int, seed: int) -> tuple[Checkpoint, TrainReport]:
    """Train the classification head on frozen encoder latents.

    The encoder checkpoint is restored, frozen, and checksummed before and
    after; any drift is a hard error. Only head parameters are optimized.
    """
    config = config if config is not None else parse_config(encoder_ckpt.config_text, "<checkpoint>")
    items = _labeled_items(corpus)
    if not items:
        raise DataError("no labeled frames in corpus")

    encoder = Encoder(config.encoder, 0)
    enc_params = [(f"encoder.{n}", t) for n, t in encoder.params()]
    enc_in_ckpt = [t for t in encoder_ckpt.tensors if t.name.startswith("encoder.")]
    restore_params(Checkpoint(enc_in_ckpt, encoder_ckpt.config_text), enc_params)
    encoder.freeze()
    checksum_before = weight_checksum(enc_params)

    init_ss, order_ss, aug_ss, drop_ss = np.random.SeedSequence(seed).spawn(4)
    head = PhaseHead(config.encoder.latent_dim,
                     np.random.Generator(np.random.PCG64(init_ss)),
                     dropout=config.train.dropout)
    head_params = [(f"head.{n}", t) for n, t in head.params()]
    order_rng = np.random.Generator(np.random.PCG64(order_ss))
    aug_rng = np.random.Generator(np.random.PCG64(aug_ss))
    drop_rng = np.random.Generator(np.random.PCG64(drop_ss))
    ranges = AugmentRanges.from_config(config)

    base_lr = config.train.lr_for("phase")
    opt = Adam(head_params, base_lr, config.train.beta1, config.train.beta2, config.train.eps)
    batch = config.train.phase_batch

    report = TrainReport(kind="train-phase", seed=seed, steps=0, config_text=config_to_text(config))
    lr_series = []
    for epoch in range(epochs):
        opt.lr = exp_decay_lr(base_lr, config.train.gamma, epoch)
        lr_series.append(opt.lr)
        order = order_rng.permutation(len(items))
        for start in range(0, len(order), batch):
            chunk = [items[i] for i in order[start : start + batch]]
            frames = [augment(Tensor(v.frame(i)), aug_rng, ranges).data for v, i, _ in chunk]
            labels = np.array([phase for _, _, phase in chunk], dtype=np.int64)
            latents = _encode_batch(encoder, frames)
            logits = head(latents, training=True, rng=drop_rng)
            loss = ops.cross_entropy(logits, labels)
            loss_value = float(loss.data)
            _check_finite(loss_value, report.steps, opt.lr)
            backward(loss)
            opt.step()
            opt.zero_grad()
            report.losses.append(loss_value)
            report.step_seconds.append(0.0)
            report.steps += 1

    checksum_after = weight_checksum(enc_params)
    if checksum_before != checksum_after:
        raise RuntimeError("frozen encoder weights changed during phase training")
    for e, lr in enumerate(lr_series):
        report.metrics[f"lr_epoch{e}"] = lr
    if report.losses:
        report.metrics["initial_loss"] = report.losses[0]
        report.metrics["final_loss"] = report.losses[-1]
    combined = checkpoint_from_params(enc_params + head_params, config_to_text(config))
    return combined, report


@dataclass
class PhaseMetrics:
    """Per-video accuracy / macro precision / macro recall, mean +/- std."""

    accuracy_mean: float
    accuracy_std: float
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    per_video_accuracy: list[float]
    per_video_precision: list[float]
    per_video_recall: list[float]
    videos_evaluated: int
    videos_skipped: int


def _confusion_metrics(truth: np.ndarray, pred: np.ndarray) -> tuple[float, float, float]:
    """Accuracy plus macro precision/recall over the phases present.

    Macro averages skip classes with no predictions (precision) or no
    ground-truth frames (recall), so they stay defined on partial videos.
    """
    acc = float((truth == pred).mean())
    precisions = []
    recalls = []
    for cls in range(NUM_PHASES):
        tp = int(((truth == cls) & (pred == cls)).sum())
        fp = int(((truth != cls) & (pred == cls)).sum())
        fn = int(((truth == cls) & (pred != cls)).sum())
        if tp + fp > 0:
            precisions.append(tp / (tp + fp))
        if tp + fn > 0:
            recalls.append(tp / (tp + fn))
    precision = float(np.mean(precisions)) if precisions else 0.0
    recall = float(np.mean(recalls)) if recalls else 0.0
    return acc, precision, recall


def predict_phases(encoder: Encoder, head: PhaseHead, video: Video,
                   indices: list[int]) -> np.ndarray:
    """Single-frame predictions: each frame is classified in isolation."""
    latents = _encode_batch(encoder, [video.frame(i) for i in indices])
    with no_grad():
        logits = head(latents, training=False)
    return logits.data.argmax(axis=1)


def evaluate_phase(encoder: Encoder, head: PhaseHead, corpus: FrameCorpus) -> PhaseMetrics:
    accs, precs, recs = [], [], []
    skipped = 0
    for video in corpus.videos:
        if not video.labels:
            print(f"warning: video '{video.name}' has no phase labels; skipped", file=sys.stderr)
            skipped += 1
            continue
        indices = sorted(video.labels)
        truth = np.array([video.labels[i] for i in indices], dtype=np.int64)
        pred = predict_phases(encoder, head, video, indices)
        a, p, r = _confusion_metrics(truth, pred)
        accs.append(a)
        precs.append(p)
        recs.append(r)
    if not accs:
        raise DataError("no labeled videos to evaluate")

    def _ms(xs: list[float]) -> tuple[float, float]:
        arr = np.asarray(xs, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    am, asd = _ms(accs)
    pm, psd = _ms(precs)
    rm, rsd = _ms(recs)
    return PhaseMetrics(am, asd, pm, psd, rm, rsd, accs, precs, recs,
                        videos_evaluated=len(accs), videos_skipped=skipped)
