"""On-disk formats: TSR1 tensor containers, binary PGM/PPM images, atomic writes.

TSR1 layout (all integers little-endian)::

    b"TSR1"                      magic
    u16  version (= 1)
    u32  tensor count N
    N x { u16 name length, utf-8 name bytes }
    N x { u32 rank, rank x u32 dims, prod(dims) x f32 payload }

Tensors appear in name-table order; payloads are IEEE-754 float32 LE.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TSR1"
VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes | str):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def encode_tsr(tensors: Mapping[str, np.ndarray]) -> bytes:
    names = list(tensors)
    if len(set(names)) != len(names):
        raise FormatError("tensor names must be unique")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(names))]
    for name in names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    for name in names:
        arr = np.asarray(tensors[name])
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tsr(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise FormatError("not a TSR1 container")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported TSR1 version {version}")
    off = 10
    names = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        names.append(buf[off + 2:off + 2 + n].decode("utf-8"))
        off += 2 + n
    out = {}
    for name in names:
        (rank,) = struct.unpack_from("<I", buf, off)
        dims = struct.unpack_from(f"<{rank}I", buf, off + 4)
        off += 4 + 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        if off + 4 * size > len(buf):
            raise FormatError(f"truncated payload for {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).astype(np.float32).reshape(dims)
        off += 4 * size
    if off != len(buf):
        raise FormatError("trailing bytes after last tensor")
    return out


def write_tsr(path, tensors: Mapping[str, np.ndarray]):
    atomic_write(path, encode_tsr(tensors))


def read_tsr(path) -> dict[str, np.ndarray]:
    return decode_tsr(Path(path).read_bytes())


def manifest(tensors: Mapping[str, np.ndarray], **extra) -> dict:
    return {"format": "TSR1", "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()], **extra}


def save_checkpoint(stem, params: Mapping[str, np.ndarray], **extra):
    """Write ``<stem>.tsr`` and the JSON manifest ``<stem>.json``."""
    stem = Path(stem)
    write_tsr(stem.with_suffix(".tsr"), params)
    atomic_write(stem.with_suffix(".json"), json.dumps(manifest(params, **extra), indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint given its ``.tsr`` path; returns (params, manifest)."""
    path = Path(path)
    params = read_tsr(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    listed = {t["name"]: tuple(t["shape"]) for t in meta["tensors"]}
    if listed != {k: v.shape for k, v in params.items()}:
        raise FormatError(f"manifest does not match {path}")
    return params, meta


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to uint8 via floor((x + 1) / 2 * 255 + 0.5), clamping first."""
    x = np.clip(np.asarray(image, np.float64), -1.0, 1.0)
    return np.floor((x + 1.0) / 2.0 * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(image: np.ndarray) -> bytes:
    """Binary PGM (1 channel) or PPM (3 channels) for a (C, H, W) image."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    if c not in (1, 3):
        raise FormatError(f"need 1 or 3 channels, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    pixels = to_bytes(np.transpose(img, (1, 2, 0)))
    return magic + f"\n{w} {h}\n255\n".encode() + pixels.tobytes()


def save_image_pgm(image: np.ndarray, path):
    atomic_write(path, encode_pnm(image))


def decode_pnm(buf: bytes) -> np.ndarray:
    """Inverse of :func:`encode_pnm` (uint8 array, (C, H, W))."""
    magic, dims, maxval, data = buf.split(b"\n", 3)
    w, h = map(int, dims.split())
    c = {b"P5": 1, b"P6": 3}[magic]
    if int(maxval) != 255:
        raise FormatError("only maxval 255 is supported")
    return np.frombuffer(data, np.uint8).reshape(h, w, c).transpose(2, 0, 1)
