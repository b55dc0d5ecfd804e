"""Binary parameter checkpoints.

Layout (little-endian)::

    b"ALWT" | version:u8 | count:u32 |
    count x ( name_len:u16 | name:utf-8 | rank:u8 | extents:u32*rank | data:f32*prod(extents) )
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .errors import FormatError

MAGIC = b"ALWT"
VERSION = 1


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<BI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not a parameter checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<BI", blob, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 9
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * n > len(blob):
                raise FormatError("checkpoint truncated")
            out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise FormatError(f"checkpoint truncated: {exc}") from None
    if pos != len(blob):
        raise FormatError("trailing bytes after checkpoint records")
    return out


def save(path: Union[str, Path], arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path: Union[str, Path]) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def digest(arrays: Mapping[str, np.ndarray]) -> str:
    return hashlib.sha256(dumps(arrays)).hexdigest()
