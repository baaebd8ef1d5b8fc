"""Single-file checkpoint format: round trips and malformed-file rejection."""

import json
import struct

import numpy as np
import pytest

from strafe.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from strafe.errors import CheckpointError


def sample_tensors():
    rng = np.random.default_rng(0)
    return {"a": rng.normal(size=(3, 4)).astype(np.float32),
            "b": rng.normal(size=(2,)).astype(np.float64),
            "empty": np.zeros((0, 5), dtype=np.float32)}


def test_round_trip_bit_identical(tmp_path):
    path = tmp_path / "x.ckpt"
    config = {"kind_detail": "unit", "n": 3}
    tensors = sample_tensors()
    save_checkpoint(path, "test-v1", config, tensors)
    loaded_config, loaded = load_checkpoint(path, expect_kind="test-v1")
    assert loaded_config == config
    for name, arr in tensors.items():
        assert loaded[name].dtype == arr.dtype
        assert loaded[name].shape == arr.shape
        assert np.array_equal(loaded[name], arr)
        assert loaded[name].tobytes() == arr.tobytes()


def test_save_is_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    tensors = sample_tensors()
    save_checkpoint(p1, "test-v1", {"n": 1}, tensors)
    save_checkpoint(p2, "test-v1", {"n": 1}, tensors)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_manifest_rejected(tmp_path):
    path = tmp_path / "trunc.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", 10 ** 6) + b"{}")
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(path)


def test_invalid_manifest_json_rejected(tmp_path):
    blob = b"not json at all"
    path = tmp_path / "json.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob)
    with pytest.raises(CheckpointError, match="JSON"):
        load_checkpoint(path)


def test_kind_and_version_checks(tmp_path):
    path = tmp_path / "k.ckpt"
    save_checkpoint(path, "test-v1", {}, {"a": np.zeros(2, dtype=np.float32)})
    with pytest.raises(CheckpointError, match="kind"):
        load_checkpoint(path, expect_kind="other-v1")

    manifest = {"format_version": FORMAT_VERSION + 1, "kind": "test-v1",
                "config": {}, "tensors": {}}
    blob = json.dumps(manifest).encode()
    bad = tmp_path / "v.ckpt"
    bad.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)


def test_out_of_bounds_offset_rejected(tmp_path):
    manifest = {"format_version": FORMAT_VERSION, "kind": "test-v1", "config": {},
                "tensors": {"a": {"shape": [4], "dtype": "float32",
                                  "offset": 0, "nbytes": 16}}}
    blob = json.dumps(manifest).encode()
    path = tmp_path / "oob.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="out of bounds"):
        load_checkpoint(path)


def test_overlapping_tensors_rejected(tmp_path):
    manifest = {"format_version": FORMAT_VERSION, "kind": "test-v1", "config": {},
                "tensors": {"a": {"shape": [2], "dtype": "float32",
                                  "offset": 0, "nbytes": 8},
                            "b": {"shape": [2], "dtype": "float32",
                                  "offset": 4, "nbytes": 8}}}
    blob = json.dumps(manifest).encode()
    path = tmp_path / "over.ckpt"
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + b"\x00" * 12)
    with pytest.raises(CheckpointError, match="overlap"):
        load_checkpoint(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        save_checkpoint(tmp_path / "d.ckpt", "test-v1", {},
                        {"a": np.zeros(2, dtype=np.int64)})
