"""Model checkpoints: embedded variant text, a parameter manifest and one raw blob.

Layout, all integers little-endian::

    b"CLOCKPT1"
    u32 spec byte length | spec text (utf-8)
    u32 entry count
    per entry: u16 name length | name | u8 dtype code | u8 rank | rank x u64 dims | u64 byte offset
    u64 blob length | blob
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .clot import CODE_DTYPES, DTYPE_CODES
from .errors import ConfigError, FormatError
from .model import Model, build_model
from .specs import spec_from_text, spec_to_text

MAGIC = b"CLOCKPT1"


def encode_checkpoint(m: Model) -> bytes:
    spec = spec_to_text(m.spec).encode()
    head = [MAGIC, struct.pack("<I", len(spec)), spec]
    params = m.parameters()
    head.append(struct.pack("<I", len(params)))
    chunks = []
    offset = 0
    for name, t in params.items():
        arr = t.data
        code = DTYPE_CODES[arr.dtype]
        raw = name.encode()
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}QQ", *arr.shape, offset))
        blob = np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes()
        chunks.append(blob)
        offset += len(blob)
    head.append(struct.pack("<Q", offset))
    return b"".join(head + chunks)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes) -> Model:
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    (spec_len,) = r.unpack("<I", "spec length")
    try:
        spec = spec_from_text(r.take(spec_len, "spec").decode())
    except (UnicodeDecodeError, ConfigError) as e:
        raise FormatError(f"embedded spec is invalid: {e}") from None
    (count,) = r.unpack("<I", "entry count")
    entries = []
    for i in range(count):
        (nlen,) = r.unpack("<H", f"entry {i}")
        name = r.take(nlen, f"entry {i} name").decode()
        code, rank = r.unpack("<BB", f"{name} header")
        if code not in CODE_DTYPES:
            raise FormatError(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q", f"{name} dims")
        (off,) = r.unpack("<Q", f"{name} offset")
        entries.append((name, CODE_DTYPES[code], dims, off))
    (blob_len,) = r.unpack("<Q", "blob length")
    blob = r.take(blob_len, "parameter blob")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after the parameter blob")

    dtype = entries[0][1].newbyteorder("=") if entries else np.dtype(np.float32)
    m = build_model(spec, 0, dtype)
    params = m.parameters()
    names = [e[0] for e in entries]
    if len(set(names)) != len(names):
        raise FormatError("duplicate parameter names in manifest")
    missing = [k for k in params if k not in set(names)]
    if missing:
        raise FormatError(f"manifest lacks parameter {missing[0]}")
    expect = 0
    for name, dt, dims, off in entries:
        if name not in params:
            raise FormatError(f"manifest names unknown parameter {name}")
        target = params[name]
        if tuple(dims) != target.shape:
            raise FormatError(f"{name}: stored shape {tuple(dims)} != expected {target.shape}")
        if dt.newbyteorder("=") != dtype:
            raise FormatError(f"{name}: mixed dtypes in one checkpoint")
        if off != expect:
            raise FormatError(f"{name}: offset {off} is not the expected {expect}")
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if off + nbytes > len(blob):
            raise FormatError(f"{name}: values run past the end of the blob")
        target.data = np.frombuffer(blob, dt, offset=off, count=nbytes // dt.itemsize).reshape(dims).astype(dtype)
        expect = off + nbytes
    if expect != len(blob):
        raise FormatError(f"blob has {len(blob) - expect} unclaimed bytes")
    return m


def save_checkpoint(m: Model, path) -> None:
    Path(path).write_bytes(encode_checkpoint(m))


def load_checkpoint(path) -> Model:
    return decode_checkpoint(Path(path).read_bytes())
