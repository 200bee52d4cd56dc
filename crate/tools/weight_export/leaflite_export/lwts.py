"""Reader and writer for the engine's LWTS weight container.

Layout (little endian): ``b"LWTS" | u32 version | u32 count | tensors | u32 crc``
where each tensor is ``u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | f32 data``
and the CRC-32 covers everything between the magic and the checksum.
Tensors are written in byte-wise name order, matching the engine.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

MAGIC = b"LWTS"
VERSION = 1
DTYPE_F32 = 0


class LwtsError(ValueError):
    pass


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    body = bytearray(struct.pack("<II", VERSION, len(tensors)))
    for name in sorted(tensors, key=lambda n: n.encode("utf-8")):
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        if not np.all(np.isfinite(arr)):
            raise LwtsError(f"{name}: non-finite values")
        raw = name.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<BB", DTYPE_F32, arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    return MAGIC + bytes(body) + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(data: bytes) -> Dict[str, np.ndarray]:
    if len(data) < 16:
        raise LwtsError("file shorter than the fixed header")
    if data[:4] != MAGIC:
        raise LwtsError("bad magic")
    body, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise LwtsError("checksum mismatch")
    version, count = struct.unpack_from("<II", body, 0)
    if version != VERSION:
        raise LwtsError(f"unsupported version {version}")
    pos, out = 8, {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            dtype, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            if dtype != DTYPE_F32:
                raise LwtsError(f"{name}: unsupported dtype {dtype}")
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if pos + 4 * size > len(body):
                raise LwtsError(f"{name}: truncated payload")
            out[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += 4 * size
    except struct.error as exc:
        raise LwtsError(f"truncated: {exc}") from exc
    if pos != len(body):
        raise LwtsError("trailing bytes after the last tensor")
    return out


def write_lwts(path: Path | str, tensors: Mapping[str, np.ndarray]) -> int:
    data = encode(tensors)
    Path(path).write_bytes(data)
    return len(data)


def read_lwts(path: Path | str) -> Dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
