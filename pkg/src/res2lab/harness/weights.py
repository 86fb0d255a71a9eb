"""R2NW weight files.

Layout (all integers little-endian)::

    magic "R2NW" | version u32 = 1 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | dims u32 * rank
                | dtype u8 (0 = float32) | raw payload
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import BadMagic, FormatError, TruncatedFile, UnsupportedDtype, UnsupportedVersion, ValidationError

MAGIC = b"R2NW"
VERSION = 1
DTYPES = {0: np.dtype("<f4")}


def encode_weights(params: dict) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value)
        if arr.dtype != np.float32:
            raise ValidationError(f"{name}: only float32 tensors can be saved, got {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValidationError(f"{name}: name or rank too large for the format")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(struct.pack("<B", 0))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_weights(params: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_weights(params))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_weights(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagic("not an R2NW weight file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise UnsupportedVersion(f"R2NW version {version} is not supported (expected {VERSION})")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        (code,) = r.unpack("<B")
        if code not in DTYPES:
            raise UnsupportedDtype(f"{name}: dtype code {code}")
        dt = DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        params[name] = np.frombuffer(r.take(size), dtype=dt).reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} unexpected bytes after the last tensor")
    return params


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())
