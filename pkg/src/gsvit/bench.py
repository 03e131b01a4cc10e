"""Inference latency / throughput harness.

Timing brackets the encoder forward only (no tape recording, no data
loading). Statistics are computed from the stored per-iteration latency
series, so a report always re-derives exactly from its own series.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint, restore_params
from .config import Config, config_to_text, parse_config
from .encoder import Encoder
from .errors import ConfigError
from .tensor import Tensor, no_grad

# Published GSViT figures, printed as reference lines only (hardware-bound,
# never asserted): 12.1 +/- 0.1 ms/frame on an RTX A5500; 10621 img/s quoted
# for the underlying efficient-ViT backbone.
REFERENCE_LATENCY_MS = (12.1, 0.1)
REFERENCE_IMAGES_PER_SEC = 10621


@dataclass
class BenchReport:
    batch: int
    warmup: int
    iters: int
    threads: int
    latencies_ms: list[float]
    mean_ms: float
    std_ms: float
    images_per_sec: float
    config_text: str = ""
    outputs: np.ndarray | None = field(default=None, repr=False)


def derive_stats(latencies_ms: list[float], batch: int) -> tuple[float, float, float]:
    """(mean, sample std, images/sec) from a latency series in milliseconds."""
    arr = np.asarray(latencies_ms, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    images_per_sec = batch * arr.size / (float(arr.sum()) / 1000.0)
    return mean, std, images_per_sec


def encoder_from_checkpoint(ckpt: Checkpoint, config: Config | None = None) -> tuple[Encoder, Config]:
    config = config if config is not None else parse_config(ckpt.config_text, "<checkpoint>")
    encoder = Encoder(config.encoder, 0)
    enc_params = [(f"encoder.{n}", t) for n, t in encoder.params()]
    enc_tensors = [t for t in ckpt.tensors if t.name.startswith("encoder.")]
    restore_params(Checkpoint(enc_tensors, ckpt.config_text), enc_params)
    return encoder, config


def bench_inference(ckpt: Checkpoint, batch: int, warmup: int, iters: int,
                    threads: int = 1, seed: int = 0, keep_outputs: bool = False,
                    config: Config | None = None) -> BenchReport:
    if batch < 1:
        raise ConfigError(f"bench batch must be >= 1, got {batch}")
    if warmup < 1:
        raise ConfigError(f"bench warmup must be >= 1, got {warmup}")
    if iters < 10:
        raise ConfigError(f"bench iters must be >= 10, got {iters}")
    if threads < 1:
        raise ConfigError(f"bench threads must be >= 1, got {threads}")

    encoder, config = encoder_from_checkpoint(ckpt, config)
    res = config.encoder.resolution
    rng = np.random.Generator(np.random.PCG64(seed))
    inputs = rng.uniform(0.0, 1.0, size=(batch, 3, res, res)).astype(np.float32)
    out = np.zeros((batch, config.encoder.latent_dim), dtype=np.float32)
    slices = [s for s in np.array_split(np.arange(batch), threads) if s.size]

    def run_slice(idx: np.ndarray) -> None:
        with no_grad():
            for i in idx:
                out[i] = encoder.encode(Tensor(inputs[i])).data

    def run_batch(pool: ThreadPoolExecutor | None) -> None:
        if pool is None:
            run_slice(np.arange(batch))
        else:
            for fut in [pool.submit(run_slice, s) for s in slices]:
                fut.result()

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for _ in range(warmup):
            run_batch(pool)
        latencies = []
        for _ in range(iters):
            t0 = time.perf_counter()
            run_batch(pool)
            latencies.append((time.perf_counter() - t0) * 1000.0)
    finally:
        if pool is not None:
            pool.shutdown()

    mean, std, ips = derive_stats(latencies, batch)
    return BenchReport(batch, warmup, iters, threads, latencies, mean, std, ips,
                       config_text=config_to_text(config),
                       outputs=out.copy() if keep_outputs else None)
