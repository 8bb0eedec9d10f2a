"""On-disk formats: raw tensors, model checkpoints, PPM frames, JSON lines.

Raw tensor ("DLT1")::

    b"DLT1" | u8 rank | rank x u32 extents (LE) | prod(extents) x f64 (LE)

Checkpoint ("DLC1")::

    b"DLC1" | u32 n | n bytes config JSON (UTF-8)
            | u32 n | n bytes config digest (ASCII hex sha256)
            | u32 count | count x (u32 n | n bytes name | raw tensor)
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .config import config_digest
from .errors import ContractError

TENSOR_MAGIC = b"DLT1"
CKPT_MAGIC = b"DLC1"


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContractError("unexpected end of file")
    return buf


def write_tensor(fh: BinaryIO, arr) -> None:
    # asarray, not ascontiguousarray: the latter promotes 0-d input to shape (1,)
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim > 255:
        raise ContractError("rank above 255 is not representable")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != TENSOR_MAGIC:
        raise ContractError("not a DLT1 tensor record")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
    return data.astype(np.float64).reshape(shape)


def save_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def _write_blob(fh: BinaryIO, blob: bytes) -> None:
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_blob(fh: BinaryIO) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n)


@dataclass
class ModelCheckpoint:
    """Named tensors plus the configuration that produced them."""

    tensors: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)

    @property
    def config_digest(self) -> str:
        return config_digest(self.config)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        _write_blob(buf, json.dumps(self.config, sort_keys=True).encode())
        _write_blob(buf, self.config_digest.encode("ascii"))
        buf.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            _write_blob(buf, name.encode())
            write_tensor(buf, self.tensors[name])
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelCheckpoint":
        fh = io.BytesIO(blob)
        if _read_exact(fh, 4) != CKPT_MAGIC:
            raise ContractError("not a DLC1 checkpoint")
        config = json.loads(_read_blob(fh).decode())
        digest = _read_blob(fh).decode("ascii")
        if digest != config_digest(config):
            raise ContractError("checkpoint config digest mismatch")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = {}
        for _ in range(count):
            name = _read_blob(fh).decode()
            tensors[name] = read_tensor(fh)
        return cls(tensors=tensors, config=config)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# frames


def write_ppm(path, frame: np.ndarray) -> None:
    """Binary P6 with 8-bit samples; grayscale frames are replicated to RGB."""
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        f = f[..., None]
    if f.shape[-1] == 1:
        f = np.repeat(f, 3, axis=-1)
    if f.shape[-1] != 3:
        raise ContractError(f"PPM needs 1 or 3 channels, got {f.shape[-1]}")
    h, w, _ = f.shape
    data = np.round(np.clip(f, 0.0, 1.0) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _ppm_tokens(blob: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while blob[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(blob, 4)
    if tokens[0] != b"P6":
        raise ContractError(f"{path}: not a binary PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ContractError(f"{path}: only 8-bit PPM is supported")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=offset)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_frames(directory, frames: np.ndarray, fmt: str = "ppm") -> list[Path]:
    """Write frames as zero-padded numbered files (``frame_00000.ppm``)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(np.asarray(frames)):
        p = d / f"frame_{i:05d}.{'ppm' if fmt == 'ppm' else 'dlt'}"
        if fmt == "ppm":
            write_ppm(p, frame)
        elif fmt == "dlt":
            save_tensor(p, frame)
        else:
            raise ContractError(f"unknown frame format {fmt!r}")
        paths.append(p)
    return paths


def read_frames(directory) -> np.ndarray:
    """Load numbered ``.ppm`` or ``.dlt`` frames in name order as (T, H, W, C)."""
    d = Path(directory)
    paths = sorted(p for p in d.iterdir() if p.suffix in (".ppm", ".dlt"))
    if not paths:
        raise ContractError(f"no frames found in {d}")
    frames = [read_ppm(p) if p.suffix == ".ppm" else load_tensor(p) for p in paths]
    return np.stack(frames)


def append_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
