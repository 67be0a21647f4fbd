"""LTSR v1 tensor files.

Layout: ``b"LTSR"``, u8 version (1), u8 dtype (0=f32, 1=f64), u8 rank, rank
little-endian u64 extents, then the little-endian scalars in C order.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"LTSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class LtsrError(ValueError):
    pass


def dumps(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == bool or np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(np.float32)
    code = _CODES.get(np.dtype(arr.dtype))
    if code is None:
        raise LtsrError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise LtsrError("rank exceeds 255")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.asarray(arr, dtype=_DTYPES[code], order="C").tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise LtsrError("bad magic")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise LtsrError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise LtsrError(f"unknown dtype code {code}")
    off = 7 + 8 * rank
    if len(buf) < off:
        raise LtsrError("truncated header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 7)
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(buf) != off + count * dtype.itemsize:
        raise LtsrError(f"payload size mismatch for shape {shape}")
    return np.frombuffer(buf, dtype=dtype, offset=off, count=count).reshape(shape).astype(dtype.newbyteorder("="))


def save(path: Union[str, Path], arr: np.ndarray) -> None:
    Path(path).write_bytes(dumps(arr))


def load(path: Union[str, Path]) -> np.ndarray:
    return loads(Path(path).read_bytes())
