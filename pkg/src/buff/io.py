"""Bit-exact on-disk formats: tensor checkpoints, 16-bit PGM images, CSV.

Checkpoint layout (all integers little-endian):

    magic   4 bytes  b"BUFF"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u32, name bytes (utf-8)
        rank     u32, dims rank*u64
        data     prod(dims) float32 values

Values are stored exactly, so load(save(x)) is bit-identical for float32
tensors.
"""
from __future__ import annotations

import csv
import math
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"BUFF"
VERSION = 1


def save_checkpoint(path, tensors) -> None:
    """Write an ordered mapping of names to float32 arrays."""
    blobs = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor '{name}' must be float32, got {arr.dtype}")
        encoded = name.encode("utf-8")
        blobs.append(struct.pack("<I", len(encoded)))
        blobs.append(encoded)
        blobs.append(struct.pack("<I", arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(blobs))


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into an ordered dict of float32 arrays."""
    with open(path, "rb") as f:
        buf = f.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint: {path}")
        out = buf[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a tensor checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        tensors[name] = data.astype(np.float32, copy=True)
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes in {path}")
    return tensors


def save_masks(path, masks) -> None:
    """Persist a list of per-image mask grids as one checkpoint file."""
    save_checkpoint(
        path, {f"mask_{i:04d}": m.astype(np.float32) for i, m in enumerate(masks)}
    )


def load_masks(path) -> list:
    tensors = load_checkpoint(path)
    return [tensors[k] for k in sorted(tensors)]


def write_pgm(path, img: np.ndarray) -> None:
    """Write a [0,1] grid as binary PGM, maxval 65535, big-endian samples."""
    h, w = img.shape
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a 16-bit binary PGM back into a [0,1] float grid."""
    with open(path, "rb") as f:
        buf = f.read()
    if not buf.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    # header = magic, width, height, maxval tokens; '#' starts a comment
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 65535:
        raise ValueError(f"{path}: expected maxval 65535, got {maxval}")
    data = np.frombuffer(buf, dtype=">u2", count=h * w, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 65535.0


def write_metrics_csv(path, rows) -> None:
    """Write per-image metric rows: (image_id, psnr_db, ssim, ause)."""

    def fmt(v):
        if isinstance(v, float):
            return "inf" if math.isinf(v) else f"{v:.10g}"
        return str(v)

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "psnr_db", "ssim", "ause"])
        for row in rows:
            writer.writerow([fmt(v) for v in row])
