"""Binary checkpoint container.

Layout (little-endian)::

    b"FNA1" | u32 version=1 | u32 entry_count
    entry: u16 name_len | utf-8 name | u8 rank | rank x u32 dims | f32 data

Entries are written in lexicographic name order, so equal stores give equal
bytes.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .netgraph import ParamStore

MAGIC = b"FNA1"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class EntryCountError(CheckpointError):
    """Declared entry count disagrees with the file contents."""


def encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"entry {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_arrays(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 12:
        raise TruncatedError("file ends inside the header")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"format version {version} is not supported")
    off = 12
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(buf):
            raise TruncatedError(f"file truncated at byte {len(buf)} (needed {off + n})")
        chunk = memoryview(buf)[off:off + n]
        off += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        if name in out:
            raise CheckpointError(f"duplicate entry {name!r}")
        out[name] = data
    if off != len(buf):
        raise EntryCountError(f"{len(buf) - off} trailing bytes after {count} declared entries")
    return out


def save_arrays(arrays: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_arrays(arrays))


def load_arrays(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode_arrays(Path(path).read_bytes())


def save_checkpoint(params: ParamStore, path: str | os.PathLike) -> None:
    save_arrays(params.flat(), path)


def load_checkpoint(path: str | os.PathLike) -> ParamStore:
    return ParamStore.from_flat(load_arrays(path))
