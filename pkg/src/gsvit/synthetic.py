"""Synthetic frame corpora for desk-scale training and tests.

Both generators write real PPM corpus trees so everything downstream
exercises the production loader.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import write_ppm

PHASE_COLORS = np.array([
    [0.9, 0.1, 0.1],
    [0.1, 0.9, 0.1],
    [0.1, 0.1, 0.9],
    [0.9, 0.9, 0.1],
    [0.9, 0.1, 0.9],
    [0.1, 0.9, 0.9],
    [0.8, 0.8, 0.8],
], dtype=np.float32)


def _write_video(vdir: Path, frames: list[np.ndarray], fps: float, procedure: str,
                 labels: dict[int, int] | None = None) -> None:
    vdir.mkdir(parents=True, exist_ok=True)
    (vdir / "meta").write_text(f"fps={fps}\nprocedure={procedure}\n")
    for i, frame in enumerate(frames):
        write_ppm(vdir / f"f{i + 1:06d}.ppm", frame)
    if labels:
        lines = [f"{idx}\t{phase}" for idx, phase in sorted(labels.items())]
        (vdir / "phases.tsv").write_text("\n".join(lines) + "\n")


def moving_square_frames(n_frames: int, size: int = 64, square: int = 10,
                         speed: int = 2, row: int | None = None) -> list[np.ndarray]:
    """White square bouncing horizontally over a black background."""
    if row is None:
        row = (size - square) // 2
    span = size - square
    frames = []
    for t in range(n_frames):
        pos = (t * speed) % (2 * span)
        x = pos if pos <= span else 2 * span - pos
        frame = np.zeros((3, size, size), dtype=np.float32)
        frame[:, row : row + square, x : x + square] = 1.0
        frames.append(frame)
    return frames


def make_moving_square_corpus(root: str | Path, n_frames: int = 80, fps: float = 5.0,
                              size: int = 64, square: int = 10, speed: int = 2,
                              videos: int = 1, procedure: str = "synthetic") -> Path:
    root = Path(root)
    for v in range(videos):
        frames = moving_square_frames(n_frames, size, square, speed,
                                      row=(size - square) * (v + 1) // (videos + 1))
        _write_video(root / f"video{v:02d}", frames, fps, procedure)
    return root


def make_phase_color_corpus(root: str | Path, videos: int = 3, frames_per_phase: int = 10,
                            size: int = 64, fps: float = 1.0, seed: int = 0,
                            procedure: str = "synthetic") -> Path:
    """Each phase renders as a distinct dominant color with mild texture."""
    root = Path(root)
    rng = np.random.Generator(np.random.PCG64(seed))
    for v in range(videos):
        frames = []
        labels = {}
        idx = 0
        for phase in range(PHASE_COLORS.shape[0]):
            for _ in range(frames_per_phase):
                base = PHASE_COLORS[phase][:, None, None]
                noise = rng.uniform(-0.05, 0.05, size=(3, size, size)).astype(np.float32)
                frames.append(np.clip(base + noise, 0.0, 1.0))
                labels[idx] = phase
                idx += 1
        _write_video(root / f"video{v:02d}", frames, fps, procedure, labels)
    return root
