"""Tensor file layout, weight manifests, and key/value configs."""

import numpy as np
import pytest

from gxattn.errors import FileFormatError
from gxattn.tensorio import (load_tensor, load_weights, read_config, save_tensor,
                             save_weights, write_config)

# 8-byte magic, LE u32 rank, LE u32 extents, u8 dtype tag, LE row-major payload
GOLDEN_2X2_F32 = (
    b"CSCATNSR"
    + b"\x02\x00\x00\x00"
    + b"\x02\x00\x00\x00" + b"\x02\x00\x00\x00"
    + b"\x00"
    + bytes.fromhex("0000803f") + bytes.fromhex("00000040")
    + bytes.fromhex("00004040") + bytes.fromhex("00008040")
)


def test_golden_bytes_for_small_float32(tmp_path):
    path = tmp_path / "t.cst1"
    save_tensor(path, np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    assert path.read_bytes() == GOLDEN_2X2_F32


def test_golden_bytes_load(tmp_path):
    path = tmp_path / "t.cst1"
    path.write_bytes(GOLDEN_2X2_F32)
    arr = load_tensor(path)
    assert arr.dtype == np.float32
    np.testing.assert_array_equal(arr, [[1.0, 2.0], [3.0, 4.0]])


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(), (5,), (2, 3), (2, 3, 4), (1, 2, 1, 2)])
def test_roundtrip(tmp_path, dtype, shape):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=shape).astype(dtype)
    path = tmp_path / "t.cst1"
    save_tensor(path, arr)
    back = load_tensor(path)
    assert back.dtype == np.dtype(dtype)
    assert back.shape == shape
    np.testing.assert_array_equal(back, arr)


def test_bad_magic(tmp_path):
    path = tmp_path / "t.cst1"
    path.write_bytes(b"NOTAMAGC" + GOLDEN_2X2_F32[8:])
    with pytest.raises(FileFormatError, match="magic"):
        load_tensor(path)


def test_unknown_dtype_tag(tmp_path):
    path = tmp_path / "t.cst1"
    raw = bytearray(GOLDEN_2X2_F32)
    raw[20] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FileFormatError, match="dtype tag"):
        load_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.cst1"
    path.write_bytes(GOLDEN_2X2_F32[:-4])
    with pytest.raises(FileFormatError, match="payload"):
        load_tensor(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "t.cst1"
    path.write_bytes(b"CSCATNSR\x02")
    with pytest.raises(FileFormatError):
        load_tensor(path)


def test_int_array_rejected(tmp_path):
    with pytest.raises(FileFormatError):
        save_tensor(tmp_path / "t.cst1", np.array([1, 2, 3]))


class TestWeightDirectories:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        named = {
            "q_weight": rng.normal(size=(4, 8)).astype(np.float32),
            "q_bias": rng.normal(size=4).astype(np.float32),
        }
        save_weights(tmp_path / "blk", named)
        back = load_weights(tmp_path / "blk")
        assert set(back) == set(named)
        for key in named:
            np.testing.assert_array_equal(back[key], named[key])

    def test_manifest_lists_name_shape_file(self, tmp_path):
        save_weights(tmp_path, {"w": np.zeros((2, 3), dtype=np.float32)})
        text = (tmp_path / "manifest.txt").read_text()
        assert "w 2x3 w.cst1" in text

    def test_shape_mismatch_detected(self, tmp_path):
        save_weights(tmp_path, {"w": np.zeros((2, 3), dtype=np.float32)})
        save_tensor(tmp_path / "w.cst1", np.zeros((3, 2), dtype=np.float32))
        with pytest.raises(FileFormatError, match="manifest says"):
            load_weights(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileFormatError, match="not found"):
            load_weights(tmp_path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        save_weights(tmp_path, {"w": np.zeros(2, dtype=np.float32)})
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("# header\n\n" + manifest.read_text())
        assert set(load_weights(tmp_path)) == {"w"}


class TestConfigFiles:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "run.cfg"
        write_config(path, {"seed": 7, "mode": "csca", "lr": 0.05})
        assert read_config(path) == {"seed": "7", "mode": "csca", "lr": "0.05"}

    def test_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# run settings\nseed=3  # root seed\n\nmode=late\n")
        assert read_config(path) == {"seed": "3", "mode": "late"}

    def test_bad_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed 3\n")
        with pytest.raises(FileFormatError):
            read_config(path)
