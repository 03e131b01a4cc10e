"""Frame corpus ingestion.

On-disk layout (strictly validated):

    root/
      <video>/
        meta            # text: fps=<float>, procedure=<tag>
        f000001.ppm     # binary P6, 8-bit, dense numbering from 1
        f000002.ppm
        phases.tsv      # optional: <frame_index>\t<phase_id> per line

Frame indices in code and in phases.tsv are 0-based; file names are
1-based per the layout. Pixels are normalized to [0,1] float32.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

NUM_PHASES = 7
_FRAME_RE = re.compile(r"^f(\d{6})\.ppm$")


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 file into a [3,H,W] float32 array in [0,1]."""
    path = Path(path)
    raw = path.read_bytes()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        return raw[start:pos]

    if token() != b"P6":
        raise DataError(f"{path}: not a binary P6 PPM")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise DataError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (only 8-bit P6)")
    if width <= 0 or height <= 0:
        raise DataError(f"{path}: invalid dimensions {width}x{height}")
    pos += 1  # single whitespace byte separates header from pixel data
    expected = width * height * 3
    data = raw[pos : pos + expected]
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} pixel bytes, found {len(data)}")
    img = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32) / 255.0


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    """Write a [3,H,W] float array in [0,1] as binary P6."""
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DataError(f"write_ppm expects [3,H,W], got {frame.shape}")
    _, h, w = frame.shape
    pixels = (np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())


@dataclass
class Video:
    name: str
    fps: float
    procedure: str
    frames: np.ndarray                      # [n, 3, H, W] float32
    labels: dict[int, int] = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def frame(self, i: int) -> np.ndarray:
        return self.frames[i]

    def frame_path(self, i: int) -> str:
        return f"{self.name}/f{i + 1:06d}.ppm"


@dataclass
class FrameCorpus:
    root: str
    videos: list[Video]

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def total_frames(self) -> int:
        return sum(v.num_frames for v in self.videos)

    def by_procedure(self, tag: str) -> "FrameCorpus":
        return FrameCorpus(self.root, [v for v in self.videos if v.procedure == tag])

    def procedures(self) -> list[str]:
        return sorted({v.procedure for v in self.videos})


def _parse_meta(path: Path) -> tuple[float, str]:
    fps = None
    procedure = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got '{line}'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "fps":
            try:
                fps = float(value)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad fps value '{value}'") from exc
        elif key == "procedure":
            procedure = value
        else:
            raise DataError(f"{path}:{lineno}: unknown meta key '{key}'")
    if fps is None:
        raise DataError(f"{path}: missing fps")
    if fps <= 0:
        raise DataError(f"{path}: fps must be positive, got {fps}")
    if procedure is None:
        raise DataError(f"{path}: missing procedure")
    return fps, procedure


def _parse_phases(path: Path, num_frames: int) -> dict[int, int]:
    labels: dict[int, int] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected <frame_index>\\t<phase_id>")
        try:
            idx, phase = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer entry") from exc
        if not 0 <= idx < num_frames:
            raise DataError(f"{path}:{lineno}: frame index {idx} outside [0,{num_frames})")
        if not 0 <= phase < NUM_PHASES:
            raise DataError(f"{path}:{lineno}: phase id {phase} outside [0,{NUM_PHASES})")
        if idx in labels:
            raise DataError(f"{path}:{lineno}: duplicate frame index {idx}")
        labels[idx] = phase
    return labels


def _load_video(vdir: Path) -> Video:
    frame_files: dict[int, Path] = {}
    has_meta = False
    has_phases = False
    for entry in sorted(vdir.iterdir()):
        if entry.name == "meta":
            has_meta = True
        elif entry.name == "phases.tsv":
            has_phases = True
        else:
            m = _FRAME_RE.match(entry.name)
            if not m:
                raise DataError(f"{entry}: unexpected file in video directory")
            frame_files[int(m.group(1))] = entry
    if not has_meta:
        raise DataError(f"{vdir}: missing meta file")
    if not frame_files:
        raise DataError(f"{vdir}: no frames")
    top = max(frame_files)
    for i in range(1, top + 1):
        if i not in frame_files:
            raise DataError(f"{vdir}: missing f{i:06d}.ppm")

    fps, procedure = _parse_meta(vdir / "meta")
    frames = []
    for i in range(1, top + 1):
        img = read_ppm(frame_files[i])
        if frames and img.shape != frames[0].shape:
            raise DataError(
                f"{frame_files[i]}: frame shape {img.shape} differs from {frames[0].shape}")
        frames.append(img)
    stack = np.stack(frames)
    labels = _parse_phases(vdir / "phases.tsv", top) if has_phases else {}
    return Video(vdir.name, fps, procedure, stack, labels)


def load_corpus(root: str | Path) -> FrameCorpus:
    """Load and validate a frame corpus; any layout deviation raises DataError."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: corpus root is not a directory")
    videos = []
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            raise DataError(f"{entry}: unexpected file in corpus root")
        videos.append(_load_video(entry))
    return FrameCorpus(str(root), videos)
