"""Versioned binary container for named float32 arrays.

Layout (little-endian)::

    magic  b"ORSP"        4 bytes
    version               u32
    kind                  u16 length + utf-8 (e.g. "fusion_scorer")
    n_arrays              u32
    per array:
        name              u16 length + utf-8
        ndim              u32
        shape             ndim x u32
        data              prod(shape) x float32, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"ORSP"
VERSION = 1


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def dumps(kind: str, arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(kind), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValidationError("parameter blob is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def loads(data: bytes, kind: str | None = None) -> tuple[str, dict]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ValidationError("not a parameter blob (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ValidationError(f"unsupported parameter blob version {version}")
    found_kind = r.string()
    if kind is not None and found_kind != kind:
        raise ValidationError(f"expected {kind!r} parameters, found {found_kind!r}")
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        name = r.string()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        arrays[name] = arr.astype(np.float64)
    if r.pos != len(data):
        raise ValidationError("trailing bytes after parameter blob")
    return found_kind, arrays


def save(path, kind: str, arrays: dict) -> None:
    Path(path).write_bytes(dumps(kind, arrays))


def load(path, kind: str | None = None) -> dict:
    return loads(Path(path).read_bytes(), kind)[1]
