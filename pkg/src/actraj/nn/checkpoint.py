"""Binary parameter checkpoints.

Layout, all integers little-endian::

    8 bytes   magic b"ACTRJCKP"
    u32       format version (1)
    u32       metadata length M, then M bytes of UTF-8 JSON
    u32       parameter count N, then N records of
                u16 name length, UTF-8 name,
                u8 dtype code (1 = float32, 2 = float64),
                u8 ndim, ndim x u32 extents,
                row-major little-endian payload
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ACTRJCKP"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


def dumps(params: Mapping[str, np.ndarray], metadata: dict | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, mlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {VERSION}")
    off = 16
    meta = json.loads(blob[off:off + mlen].decode("utf-8"))
    off += mlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=dt, count=n, offset=off).reshape(shape)
        off += n * dt.itemsize
        params[name] = arr.astype(dt.newbyteorder("="))
    if off != len(blob):
        raise CheckpointError("trailing bytes after last parameter")
    return params, meta


def save(path: str | Path, params: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(params, metadata))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
