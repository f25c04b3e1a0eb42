"""Flat binary key -> float64-array container.

Deterministic layout so identical contents always produce identical bytes:

    magic   b"DACKPT01"
    count   uint32 little-endian
    entry*  name_len:uint32, name:utf-8, ndim:uint32, shape:uint64*,
            payload: float64 little-endian, row-major

Entries are written in sorted key order. Round-trip is bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CompatibilityError

MAGIC = b"DACKPT01"


def dumps(arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f8"))
        enc = name.encode("utf-8")
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict:
    if blob[:8] != MAGIC:
        raise CompatibilityError("not a checkpoint file (bad magic)")
    off = 8
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out[name] = arr.astype(np.float64).copy()
    if off != len(blob):
        raise CompatibilityError("trailing bytes in checkpoint file")
    return out


def save(path, arrays: dict):
    with open(path, "wb") as fh:
        fh.write(dumps(arrays))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
