"""Binary model checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"FFA1"
    version u32      currently 1
    then per tensor, until EOF:
        name_len u32
        name     UTF-8, name_len bytes
        rank     u32
        dims     rank x u64
        payload  float64 little-endian, C order

Tensor order in the file follows the dict insertion order, so a
save/load round trip preserves it.
"""

from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"FFA1"
VERSION = 1


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim:
            a = np.ascontiguousarray(a)  # ascontiguousarray promotes rank 0 to rank 1
        buf.write(struct.pack("<I", a.ndim))
        for d in a.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(a.astype("<f8").tobytes())
    return buf.getvalue()


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ValueError(f"bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    off = 8
    total = len(blob)
    while off < total:
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
        off += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += 8 * count
        tensors[name] = arr.reshape(dims).astype(np.float64)
    return tensors


def save(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(encode(tensors))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return decode(f.read())
