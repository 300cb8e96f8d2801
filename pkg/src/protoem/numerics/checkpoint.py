"""Named-tensor container file.

Layout (all integers little-endian)::

    b"PFKT" | version u32 | count u32 |
    repeat count times:
        name_len u32 | name utf-8 | rank u32 | extents u64 * rank | fp32 payload
"""
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFKT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors):
    """Serialise an ordered ``name -> array`` mapping to bytes."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf):
    """Parse bytes into an ordered ``name -> float64 array`` dict."""
    view = memoryview(buf)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("bad magic")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", view, off)
            off += 4
            name = bytes(view[off:off + n]).decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", view, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", view, off)
            off += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if off + 4 * size > len(view):
                raise CheckpointError(f"truncated payload for {name!r}")
            arr = np.frombuffer(view, dtype="<f4", count=size, offset=off)
            off += 4 * size
            out[name] = arr.astype(np.float64).reshape(shape)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if off != len(view):
        raise CheckpointError(f"{len(view) - off} trailing bytes")
    return out


def save(path, tensors):
    Path(path).write_bytes(encode(tensors))


def load(path):
    return decode(Path(path).read_bytes())


def fp32_round(arr):
    """Round to the nearest fp32 value, returned as float64."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)
