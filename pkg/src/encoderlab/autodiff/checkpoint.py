"""Binary checkpoint format.

Layout (little-endian)::

    b"IMPK" | u32 version=1 | u32 count
    count x ( u32 name_len | utf-8 name | u32 ndim | ndim x u32 dim | f32 payload )
    u64 FNV-1a over the concatenated f32 payloads
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

MAGIC = b"IMPK"
VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


class CheckpointError(ValueError):
    pass


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    """64-bit FNV-1a; ``h`` lets callers chain over several buffers."""
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def _fnv_numpy(chunks: list[bytes]) -> int:
    h = _FNV_OFFSET
    for c in chunks:
        h = fnv1a64(c, h)
    return h


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    payloads = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = arr.tobytes()
        payloads.append(payload)
        parts.append(payload)
    parts.append(struct.pack("<Q", _fnv_numpy(payloads)))
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic, not an IMPK checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    payloads = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            payload = blob[off:off + nbytes]
            if len(payload) != nbytes:
                raise CheckpointError(f"truncated payload for {name!r}")
            off += nbytes
            payloads.append(payload)
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        (checksum,) = struct.unpack_from("<Q", blob, off)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off + 8 != len(blob):
        raise CheckpointError("trailing bytes after checksum")
    if checksum != _fnv_numpy(payloads):
        raise CheckpointError("checksum mismatch")
    return out


def save(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path: Union[str, Path]) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
