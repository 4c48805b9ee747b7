"""Flat binary container for named float64 tensors.

Each record, all integers little-endian::

    u32  name length in bytes
    ...  UTF-8 name
    u32  rank
    u64  dims[rank]
    f64  values[prod(dims)], row-major

Records are concatenated until end of file.
"""
import math
import struct

import numpy as np


class TensorFileError(ValueError):
    pass


def dump_tensors(tensors: dict) -> bytes:
    chunks = []
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def load_tensors(data: bytes) -> dict:
    out = {}
    pos = 0
    end = len(data)

    def take(n):
        nonlocal pos
        if pos + n > end:
            raise TensorFileError(f"truncated tensor file at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < end:
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise TensorFileError(f"tensor name at byte {pos - name_len} is not UTF-8") from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = math.prod(dims)
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
        if name in out:
            raise TensorFileError(f"duplicate tensor name {name!r}")
        out[name] = arr
    return out
