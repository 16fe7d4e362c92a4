"""Self-describing binary snapshots for caching and artifact exchange.

Container layout, all little-endian:

    magic  b"QPRS"
    u16    format version (currently 1)
    u16    section count
    per section:
        u16, bytes   section name (utf-8)
        u16          array count
        per array:
            u16, bytes  array name (utf-8)
            u8          dtype code (0 f64, 1 c128, 2 i64)
            u8          ndim
            u32 * ndim  dims
            bytes       payload, C order
        u32          CRC32 of everything in the section before it

Payloads are 64-bit floats (complex as re/im pairs), so identical data
produces identical bytes and file digests can key caches.
"""

from __future__ import annotations

import io
import os
import struct
import zlib

import numpy as np

from .errors import SnapshotError

MAGIC = b"QPRS"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<c16", 2: "<i8"}
_CODES = {np.dtype("float64"): 0, np.dtype("complex128"): 1,
          np.dtype("int64"): 2}


def _name_bytes(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise SnapshotError(f"name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def save_snapshot(path, sections: dict) -> None:
    """Write {section: {array name: ndarray or scalar}} to ``path``."""
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<HH", VERSION, len(sections)))
    for sec_name, arrays in sections.items():
        sec = io.BytesIO()
        sec.write(_name_bytes(sec_name))
        sec.write(struct.pack("<H", len(arrays)))
        for arr_name, value in arrays.items():
            arr = np.asarray(value)
            if arr.dtype not in _CODES:
                if np.issubdtype(arr.dtype, np.integer):
                    arr = arr.astype(np.int64)
                elif np.issubdtype(arr.dtype, np.complexfloating):
                    arr = arr.astype(np.complex128)
                else:
                    arr = arr.astype(np.float64)
            sec.write(_name_bytes(arr_name))
            sec.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            sec.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            sec.write(np.ascontiguousarray(arr).astype(
                _DTYPES[_CODES[arr.dtype]], copy=False).tobytes())
        raw = sec.getvalue()
        body.write(raw)
        body.write(struct.pack("<I", zlib.crc32(raw) & 0xFFFFFFFF))
    # write-then-rename so a concurrent reader never sees a partial file
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(body.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError(f"{self.path}: truncated snapshot")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def load_snapshot(path) -> dict:
    """Read a snapshot, verifying magic, version, and every section CRC."""
    with open(path, "rb") as fh:
        data = fh.read()
    rd = _Reader(data, path)
    if rd.take(4) != MAGIC:
        raise SnapshotError(f"{path}: bad magic, not a QPRS snapshot")
    version, n_sections = rd.unpack("<HH")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(n_sections):
        sec_start = rd.pos
        sec_name = rd.name()
        (n_arrays,) = rd.unpack("<H")
        arrays = {}
        for _ in range(n_arrays):
            arr_name = rd.name()
            code, ndim = rd.unpack("<BB")
            if code not in _DTYPES:
                raise SnapshotError(f"{path}: unknown dtype code {code}")
            dims = rd.unpack(f"<{ndim}I")
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            dt = np.dtype(_DTYPES[code])
            raw = rd.take(count * dt.itemsize)
            arrays[arr_name] = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
        span = rd.data[sec_start:rd.pos]
        (crc,) = rd.unpack("<I")
        if crc != (zlib.crc32(span) & 0xFFFFFFFF):
            raise SnapshotError(
                f"{path}: CRC mismatch in section {sec_name!r}; snapshot "
                "corrupt, delete it to recompute")
        out[sec_name] = arrays
    if rd.pos != len(data):
        raise SnapshotError(f"{path}: trailing bytes after last section")
    return out
