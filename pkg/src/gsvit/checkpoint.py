"""Single-file weight container: `GSVT` magic, text manifest, raw payload.

Layout (all integers little-endian):

    bytes 0..3    magic "GSVT"
    bytes 4..7    format version (u32)
    bytes 8..15   manifest length in bytes (u64)
    manifest      UTF-8 `key = value` lines: tensor table + config snapshot
    payload       raw little-endian float32 blobs, each 64-byte aligned,
                  at strictly increasing offsets relative to payload start

The manifest carries per-tensor CRC32 checksums; save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor

MAGIC = b"GSVT"
VERSION = 1
_ALIGN = 64
_HEADER = 16


@dataclass
class CheckpointTensor:
    name: str
    data: np.ndarray          # float32, C-contiguous
    tunable: bool


@dataclass
class Checkpoint:
    tensors: list[CheckpointTensor]
    config_text: str

    def names(self) -> list[str]:
        return [t.name for t in self.tensors]

    def get(self, name: str) -> CheckpointTensor:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def total_params(self) -> int:
        return sum(t.data.size for t in self.tensors)

    @property
    def tunable_params(self) -> int:
        return sum(t.data.size for t in self.tensors if t.tunable)


def checkpoint_from_params(named_params: list[tuple[str, Tensor]], config_text: str) -> Checkpoint:
    tensors = []
    for name, t in named_params:
        if t.data.dtype != np.float32:
            raise CheckpointError(f"tensor '{name}' is {t.data.dtype}; checkpoints store float32")
        tensors.append(CheckpointTensor(name, np.ascontiguousarray(t.data), t.requires_grad))
    return Checkpoint(tensors, config_text)


def restore_params(ckpt: Checkpoint, named_params: list[tuple[str, Tensor]]) -> None:
    """Copy checkpoint tensors into model parameters, matching name order."""
    if len(ckpt.tensors) != len(named_params):
        raise CheckpointError(
            f"checkpoint has {len(ckpt.tensors)} tensors, model expects {len(named_params)}")
    for entry, (name, t) in zip(ckpt.tensors, named_params):
        if entry.name != name:
            raise CheckpointError(f"tensor mismatch: checkpoint '{entry.name}' vs model '{name}'")
        if entry.data.shape != t.data.shape:
            raise CheckpointError(
                f"tensor '{name}' shape mismatch: checkpoint {entry.data.shape} vs model {t.data.shape}")
        t.data[...] = entry.data.astype(t.data.dtype)
        t.requires_grad = entry.tunable


def weight_checksum(named_params: list[tuple[str, Tensor]]) -> int:
    """CRC32 over all parameter bytes in name order (frozen-weight assertions)."""
    crc = 0
    for name, t in named_params:
        crc = zlib.crc32(name.encode("utf-8"), crc)
        crc = zlib.crc32(np.ascontiguousarray(t.data).tobytes(), crc)
    return crc


def _align(n: int) -> int:
    return (n + _ALIGN - 1) // _ALIGN * _ALIGN


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    offsets = []
    off = 0
    for t in ckpt.tensors:
        offsets.append(off)
        off = _align(off + t.data.nbytes)

    lines = [f"tensor_count = {len(ckpt.tensors)}"]
    for i, (t, offset) in enumerate(zip(ckpt.tensors, offsets)):
        shape = ",".join(str(s) for s in t.data.shape)
        blob = t.data.astype("<f4", copy=False).tobytes()
        lines.append(f"tensor.{i}.name = {t.name}")
        lines.append(f"tensor.{i}.shape = {shape}")
        lines.append(f"tensor.{i}.tunable = {int(t.tunable)}")
        lines.append(f"tensor.{i}.offset = {offset}")
        lines.append(f"tensor.{i}.size = {t.data.nbytes}")
        lines.append(f"tensor.{i}.crc32 = {zlib.crc32(blob):08x}")
    for cfg_line in ckpt.config_text.splitlines():
        if cfg_line.strip():
            lines.append(f"config.{cfg_line}")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")

    payload_start = _align(_HEADER + len(manifest))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        fh.write(b"\0" * (payload_start - _HEADER - len(manifest)))
        pos = 0
        for t, offset in zip(ckpt.tensors, offsets):
            fh.write(b"\0" * (offset - pos))
            blob = t.data.astype("<f4", copy=False).tobytes()
            fh.write(blob)
            pos = offset + len(blob)


def _manifest_int(kv: dict[str, str], key: str) -> int:
    if key not in kv:
        raise CheckpointError(f"manifest missing '{key}'")
    try:
        return int(kv[key])
    except ValueError as exc:
        raise CheckpointError(f"manifest field '{key}' is not an integer") from exc


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a GSVT checkpoint")
    version = int.from_bytes(raw[4:8], "little")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    mlen = int.from_bytes(raw[8:16], "little")
    if _HEADER + mlen > len(raw):
        raise CheckpointError(f"{path}: manifest extends past end of file")
    manifest = raw[_HEADER : _HEADER + mlen].decode("utf-8")

    kv: dict[str, str] = {}
    config_lines: list[str] = []
    for line in manifest.splitlines():
        if not line.strip():
            continue
        if line.startswith("config."):
            config_lines.append(line[len("config."):])
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise CheckpointError(f"{path}: malformed manifest line '{line}'")
        kv[key] = value

    count = _manifest_int(kv, "tensor_count")
    payload_start = _align(_HEADER + mlen)
    tensors = []
    prev_offset = -1
    expected_end = payload_start
    for i in range(count):
        name = kv.get(f"tensor.{i}.name")
        if name is None:
            raise CheckpointError(f"{path}: manifest missing tensor.{i}.name")
        shape_text = kv.get(f"tensor.{i}.shape", "")
        shape = tuple(int(s) for s in shape_text.split(",") if s != "")
        tunable = bool(_manifest_int(kv, f"tensor.{i}.tunable"))
        offset = _manifest_int(kv, f"tensor.{i}.offset")
        size = _manifest_int(kv, f"tensor.{i}.size")
        crc_expect = kv.get(f"tensor.{i}.crc32")
        if offset <= prev_offset:
            raise CheckpointError(f"{path}: tensor offsets not strictly increasing at '{name}'")
        if offset % _ALIGN != 0:
            raise CheckpointError(f"{path}: tensor '{name}' offset {offset} not 64-byte aligned")
        prev_offset = offset
        nelem = 1
        for s in shape:
            nelem *= s
        if nelem * 4 != size:
            raise CheckpointError(f"{path}: tensor '{name}' size {size} does not match shape {shape}")
        start = payload_start + offset
        blob = raw[start : start + size]
        if len(blob) != size:
            raise CheckpointError(
                f"{path}: truncated payload for '{name}': expected {size} bytes, got {len(blob)}")
        if crc_expect is not None and f"{zlib.crc32(blob):08x}" != crc_expect:
            raise CheckpointError(f"{path}: checksum mismatch for tensor '{name}'")
        data = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float32)
        tensors.append(CheckpointTensor(name, np.ascontiguousarray(data), tunable))
        expected_end = start + size

    if len(raw) != expected_end:
        raise CheckpointError(
            f"{path}: payload length mismatch: expected {expected_end} bytes, file has {len(raw)}")
    config_text = ("\n".join(config_lines) + "\n") if config_lines else ""
    return Checkpoint(tensors, config_text)
