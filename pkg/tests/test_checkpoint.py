import struct

import numpy as np
import pytest

from ccfdm import checkpoint
from ccfdm.errors import CheckpointError


def records():
    rng = np.random.default_rng(0)
    return {
        "param/a/w": rng.standard_normal((3, 4)).astype(np.float32),
        "param/a/b": rng.standard_normal(4),
        "replay/obs": rng.integers(0, 256, (2, 3, 5, 5), dtype=np.uint8),
        "replay/count": np.arange(3, dtype=np.int64),
        "scalar": np.float64(1.5) * np.ones(()),
        "meta": {"env_step": 10, "rows": ["1,2\n"], "nested": {"x": [1, 2]}},
    }


def test_round_trip_bit_identical(tmp_path):
    p = tmp_path / "x.ckpt"
    rec = records()
    checkpoint.save(p, rec)
    out = checkpoint.load(p)
    assert list(out) == list(rec)
    for k, v in rec.items():
        if isinstance(v, np.ndarray):
            assert out[k].dtype == v.dtype and out[k].shape == v.shape
            assert out[k].tobytes() == v.tobytes()
        else:
            assert out[k] == v


def test_float32_stored_as_four_bytes(tmp_path):
    p32, p64 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    checkpoint.save(p32, {"w": np.zeros(1000, np.float32)})
    checkpoint.save(p64, {"w": np.zeros(1000, np.float64)})
    assert p64.stat().st_size - p32.stat().st_size == 4000


def test_no_temp_file_left(tmp_path):
    checkpoint.save(tmp_path / "x.ckpt", records())
    assert [f.name for f in tmp_path.iterdir()] == ["x.ckpt"]


@pytest.mark.parametrize("cut", [1, 10, 100])
def test_truncated(tmp_path, cut):
    p = tmp_path / "x.ckpt"
    checkpoint.save(p, records())
    data = p.read_bytes()
    p.write_bytes(data[:-cut])
    with pytest.raises(CheckpointError):
        checkpoint.load(p)


def test_corrupted_byte(tmp_path):
    p = tmp_path / "x.ckpt"
    checkpoint.save(p, records())
    data = bytearray(p.read_bytes())
    data[len(data) // 2] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint.load(p)


def test_bad_magic_and_version(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.load(p)
    checkpoint.save(p, records())
    data = bytearray(p.read_bytes())
    data[8:12] = struct.pack("<I", 99)
    p.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.load(p)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "nope.ckpt")


def test_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.save(tmp_path / "x.ckpt", {"c": np.zeros(2, np.complex64)})
