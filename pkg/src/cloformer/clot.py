"""CLOT tensor files.

Layout (no padding)::

    b"CLOT" | u8 version=1 | u8 dtype (1=f32, 2=f64) | u8 rank
    | rank x u64 little-endian extents | row-major little-endian values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import MAX_RANK, Tensor

MAGIC = b"CLOT"
VERSION = 1
DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def encode_tensor(t: Tensor) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    code = DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"cannot encode dtype {arr.dtype}")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes()


def decode_tensor(buf: bytes) -> Tensor:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FormatError("not a CLOT tensor (bad magic)")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported CLOT version {version}")
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds {MAX_RANK}")
    off = 7
    if len(buf) < off + 8 * rank:
        raise FormatError("truncated CLOT header")
    shape = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    dtype = CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    need = off + count * dtype.itemsize
    if len(buf) != need:
        raise FormatError(f"CLOT payload is {len(buf) - off} bytes, expected {need - off}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
    return Tensor(arr.astype(dtype.newbyteorder("=")), dtype=dtype.newbyteorder("="))


def save_tensor(t: Tensor, path) -> None:
    Path(path).write_bytes(encode_tensor(t))


def load_tensor(path) -> Tensor:
    return decode_tensor(Path(path).read_bytes())
