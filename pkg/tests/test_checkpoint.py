import struct

import numpy as np
import pytest

from fna.checkpoint import (
    MAGIC,
    BadMagicError,
    CheckpointError,
    EntryCountError,
    TruncatedError,
    UnsupportedVersionError,
    decode_arrays,
    encode_arrays,
    load_checkpoint,
    save_checkpoint,
)
from fna.netgraph import ParamStore, build_seed_network


def test_round_trip_is_bit_exact(tmp_path):
    _, params = build_seed_network(rng=np.random.default_rng(0))
    path = tmp_path / "seed.fna"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.equals(params)
    save_checkpoint(loaded, tmp_path / "again.fna")
    assert path.read_bytes() == (tmp_path / "again.fna").read_bytes()


def test_empty_store_round_trips(tmp_path):
    save_checkpoint(ParamStore(), tmp_path / "empty.fna")
    assert len(load_checkpoint(tmp_path / "empty.fna")) == 0
    assert (tmp_path / "empty.fna").read_bytes() == MAGIC + struct.pack("<II", 1, 0)


def test_layout_matches_documented_format():
    buf = encode_arrays({"b": np.array([1.5], np.float32), "a": np.zeros((2, 1), np.float32)})
    assert buf[:4] == b"FNA1"
    assert struct.unpack_from("<II", buf, 4) == (1, 2)
    # first entry is "a" (lexicographic), rank 2, dims 2x1, two f32 zeros
    assert struct.unpack_from("<H", buf, 12) == (1,)
    assert buf[14:15] == b"a"
    assert struct.unpack_from("<B2I2f", buf, 15) == (2, 2, 1, 0.0, 0.0)


def test_bad_magic():
    with pytest.raises(BadMagicError):
        decode_arrays(b"NOPE" + bytes(8))


def test_bad_version():
    with pytest.raises(UnsupportedVersionError):
        decode_arrays(MAGIC + struct.pack("<II", 2, 0))


def test_truncated_file():
    buf = encode_arrays({"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    for cut in (6, 13, len(buf) - 1):
        with pytest.raises(TruncatedError):
            decode_arrays(buf[:cut])


def test_count_mismatch():
    buf = encode_arrays({"w": np.ones(2, np.float32)})
    too_few = buf[:8] + struct.pack("<I", 0) + buf[12:]
    with pytest.raises(EntryCountError):
        decode_arrays(too_few)
    too_many = buf[:8] + struct.pack("<I", 2) + buf[12:]
    with pytest.raises(TruncatedError):
        decode_arrays(too_many)


def test_error_kinds_are_distinct():
    kinds = {BadMagicError, UnsupportedVersionError, TruncatedError, EntryCountError}
    assert len(kinds) == 4 and all(issubclass(k, CheckpointError) for k in kinds)
