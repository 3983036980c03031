from collections import OrderedDict

import numpy as np
import pytest

from hingenet import checkpoint


def sample_tensors(rng):
    return OrderedDict([
        ("stem/W", rng.normal(size=(9, 4))),
        ("stem/b", rng.normal(size=4)),
        ("block0.conv1/W", rng.normal(size=(36, 4))),
        ("block0.conv1/A", rng.normal(size=(4, 4))),
        ("block0.conv1/mask", np.array([1, 0, 1, 1], dtype=np.uint8)),
        ("head/W", rng.normal(size=(4, 3))),
    ])


def test_round_trip(tmp_path, rng):
    tensors = sample_tensors(rng)
    path = tmp_path / "model.hngw"
    checkpoint.save(path, tensors)
    loaded = checkpoint.load(path)
    assert list(loaded) == list(tensors)  # order preserved
    for name, arr in tensors.items():
        if name.endswith("/mask"):
            assert loaded[name].dtype == np.uint8
            assert np.array_equal(loaded[name], arr)
        else:
            assert loaded[name].dtype == np.float64
            assert np.array_equal(loaded[name], arr.astype(np.float32).astype(np.float64))


def test_byte_exact_determinism(tmp_path, rng):
    tensors = sample_tensors(rng)
    p1, p2 = tmp_path / "a.hngw", tmp_path / "b.hngw"
    checkpoint.save(p1, tensors)
    checkpoint.save(p2, tensors)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    path = tmp_path / "one.hngw"
    checkpoint.save(path, OrderedDict([("x", np.zeros((2, 3)))]))
    blob = path.read_bytes()
    assert blob[:4] == b"HNGW"
    assert int.from_bytes(blob[4:8], "little") == 1    # version
    assert int.from_bytes(blob[8:12], "little") == 1   # tensor count
    assert int.from_bytes(blob[12:14], "little") == 1  # name length
    assert blob[14:15] == b"x"
    assert blob[15] == 2  # ndim
    assert int.from_bytes(blob[16:24], "little") == 2
    assert int.from_bytes(blob[24:32], "little") == 3
    assert len(blob) == 32 + 6 * 4  # f32 payload


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.hngw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(path)


def test_truncated(tmp_path, rng):
    path = tmp_path / "t.hngw"
    checkpoint.save(path, sample_tensors(rng))
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(path)


def test_trailing_bytes(tmp_path, rng):
    path = tmp_path / "t.hngw"
    checkpoint.save(path, sample_tensors(rng))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(path)


def test_non_finite_rejected(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.save(tmp_path / "x.hngw",
                        OrderedDict([("w", np.array([[np.nan]]))]))
