"""Binary file formats: HRT1 tensors, HRM1 model containers, P5 PGM images.

HRT1 layout: magic ``HRT1``, u8 dtype tag (0 = f32, 1 = f64), u8 rank,
rank x u64 little-endian extents, then raw little-endian values row-major.

HRM1 layout: magic ``HRM1``, u32 JSON header length, UTF-8 JSON header
(model spec, tap set, optional metadata), u32 tensor count, then per tensor
a u16 name length, the UTF-8 name, and an HRT1 blob.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"HRT1"
MODEL_MAGIC = b"HRM1"

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    dt = np.dtype(arr.dtype)
    if dt not in _TAG_FOR_KIND:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}; expected float32 or float64")
    header = TENSOR_MAGIC + struct.pack("<BB", _TAG_FOR_KIND[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr).astype(dt.newbyteorder("<"), copy=False).tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one HRT1 blob starting at ``offset``; returns (array, next offset)."""
    if buf[offset : offset + 4] != TENSOR_MAGIC:
        raise ValueError("not an HRT1 tensor (bad magic)")
    tag, rank = struct.unpack_from("<BB", buf, offset + 4)
    if tag not in _DTYPE_TAGS:
        raise ValueError(f"unknown HRT1 dtype tag {tag}")
    shape = struct.unpack_from(f"<{rank}Q", buf, offset + 6)
    dt = _DTYPE_TAGS[tag]
    start = offset + 6 + 8 * rank
    count = int(np.prod(shape)) if rank else 1
    end = start + count * dt.itemsize
    if end > len(buf):
        raise ValueError("truncated HRT1 tensor")
    arr = np.frombuffer(buf[start:end], dtype=dt).reshape(shape)
    return arr.astype(dt.newbyteorder("=")), end


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path: str | Path) -> np.ndarray:
    arr, _ = tensor_from_bytes(Path(path).read_bytes())
    return arr


def save_model(path: str | Path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write an HRM1 container; ``header`` must be JSON-serializable."""
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<I", len(head)), head,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(tensor_to_bytes(arr))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not an HRM1 model file (bad magic)")
    (head_len,) = struct.unpack_from("<I", buf, 4)
    header = json.loads(buf[8 : 8 + head_len].decode("utf-8"))
    off = 8 + head_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + name_len].decode("utf-8")
        off += name_len
        tensors[name], off = tensor_from_bytes(buf, off)
    return header, tensors


# ---------------------------------------------------------------------------
# PGM (binary P5, 8-bit)
# ---------------------------------------------------------------------------

def write_pgm(path: str | Path, values: np.ndarray) -> None:
    """Quantize a (H,W) array in [0,1] to 8 bits and write binary PGM."""
    if values.ndim != 2:
        raise ValueError(f"PGM export expects a 2-d array, got shape {values.shape}")
    q = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary 8-bit PGM back to a float32 (H,W) array in [0,1]."""
    buf = Path(path).read_bytes()
    if not buf.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    data = np.frombuffer(buf, dtype=np.uint8, count=width * height, offset=pos)
    return (data.reshape(height, width).astype(np.float32)) / np.float32(255.0)
