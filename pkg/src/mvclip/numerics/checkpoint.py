"""``DDCP`` checkpoint container: named little-endian arrays.

Layout::

    b"DDCP" | version:u32 | count:u32 |
    count x (name_len:u32 | name:utf-8 | dtype:u8 | rank:u32 | dims:u64*rank | values)
"""
from __future__ import annotations

import io
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"DDCP"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_OF = {v.str: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.dtype.newbyteorder("<")
        tag = _TAG_OF.get(le.str)
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BI", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=le).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a DDCP checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        tag, rank = struct.unpack_from("<BI", blob, pos)
        pos += 5
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        dtype = _DTYPE_TAGS.get(tag)
        if dtype is None:
            raise CheckpointError(f"unknown dtype tag {tag}")
        n = int(np.prod(dims, dtype=np.int64))
        nbytes = n * dtype.itemsize
        if pos + nbytes > len(blob):
            raise CheckpointError("truncated checkpoint")
        out[name] = np.frombuffer(blob, dtype=dtype, count=n, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return out


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
