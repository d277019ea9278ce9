import struct
from collections import OrderedDict

import numpy as np
import pytest
from PIL import Image

from lir.io import (CheckpointError, ImageFormatError, load_checkpoint, read_lirc, read_png,
                    save_checkpoint, write_lirc, write_png)
from lir.model import LIR, ModelConfig
from lir.tensor import Tensor

from conftest import TINY


def test_lirc_round_trip_bit_exact_and_ordered(tmp_path, rng):
    tensors = OrderedDict([("z.last", rng.standard_normal((2, 3)).astype(np.float32)),
                           ("a.first", rng.standard_normal(5)),
                           ("scalar", np.array(1.5, np.float32)),
                           ("ünï", np.zeros((0, 4), np.float32))])
    path = str(tmp_path / "t.lirc")
    write_lirc(path, tensors, {"k": [1, 2]})
    back, cfg = read_lirc(path)
    assert list(back) == list(tensors)
    assert cfg == {"k": [1, 2]}
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert back[k].tobytes() == v.tobytes()


def test_lirc_header_layout(tmp_path):
    path = tmp_path / "h.lirc"
    write_lirc(str(path), {"w": np.array([1.0, 2.0], np.float32)}, {})
    raw = path.read_bytes()
    assert raw[:4] == b"LIRC"
    version, n = struct.unpack("<II", raw[4:12])
    assert version == 1 and raw[12:12 + n] == b"{}"
    pos = 12 + n
    assert struct.unpack("<I", raw[pos:pos + 4]) == (1,)
    assert struct.unpack("<H", raw[pos + 4:pos + 6]) == (1,)
    assert raw[pos + 6:pos + 7] == b"w"
    assert struct.unpack("<BBI", raw[pos + 7:pos + 13]) == (0, 1, 2)
    assert struct.unpack("<2f", raw[pos + 13:]) == (1.0, 2.0)


def _corrupt(tmp_path, mutate):
    path = tmp_path / "c.lirc"
    write_lirc(str(path), {"w": np.ones(3, np.float32), "b": np.zeros(2, np.float32)}, {"x": 1})
    path.write_bytes(mutate(bytearray(path.read_bytes())))
    return str(path)


def _set(buf, offset, value):
    buf[offset:offset + len(value)] = value
    return bytes(buf)


def test_bad_magic(tmp_path):
    with pytest.raises(CheckpointError, match="magic"):
        read_lirc(_corrupt(tmp_path, lambda b: _set(b, 0, b"XIRC")))


def test_bad_version(tmp_path):
    with pytest.raises(CheckpointError, match="version"):
        read_lirc(_corrupt(tmp_path, lambda b: _set(b, 4, struct.pack("<I", 2))))


def test_truncated(tmp_path):
    with pytest.raises(CheckpointError, match="truncated"):
        read_lirc(_corrupt(tmp_path, lambda b: bytes(b[:-3])))


def test_unknown_dtype(tmp_path):
    blob_len = len(b'{"x": 1}')
    dtype_at = 12 + blob_len + 4 + 2 + 1
    with pytest.raises(CheckpointError, match="dtype"):
        read_lirc(_corrupt(tmp_path, lambda b: _set(b, dtype_at, b"\x07")))


def test_duplicate_name(tmp_path):
    blob_len = len(b'{"x": 1}')
    second_name = 12 + blob_len + 4 + 2 + 1 + 2 + 4 + 12 + 2
    with pytest.raises(CheckpointError, match="duplicate"):
        read_lirc(_corrupt(tmp_path, lambda b: _set(b, second_name, b"w")))


def test_unsupported_dtype_on_write(tmp_path):
    with pytest.raises(CheckpointError):
        write_lirc(str(tmp_path / "x.lirc"), {"i": np.arange(3)}, {})


def test_model_checkpoint_forward_bit_exact(tmp_path, rng):
    model = LIR(TINY, seed=4)
    for p in model.parameters():
        p.data = (p.data + 0.05 * rng.standard_normal(p.shape)).astype(p.dtype)
    path = str(tmp_path / "m.lirc")
    save_checkpoint(path, model, metadata={"note": "x"})
    back = load_checkpoint(path)
    assert list(back.state_dict()) == list(model.state_dict())
    x = Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
    assert back(x).data.tobytes() == model(x).data.tobytes()


def test_fused_checkpoint_matches_unfused(tmp_path, rng):
    model = LIR(TINY, seed=1)
    for p in model.parameters():
        p.data = (p.data + 0.05 * rng.standard_normal(p.shape)).astype(p.dtype)
    x = Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
    ref = model(x).data
    model.fuse()
    path = str(tmp_path / "f.lirc")
    save_checkpoint(path, model)
    names = list(read_lirc(path)[0])
    assert any(n.endswith(".fused") for n in names)
    assert read_lirc(path)[1]["fused"] is True
    back = load_checkpoint(path)
    assert back.is_fused
    assert np.max(np.abs(back(x).data - ref)) < 1e-5


def test_checkpoint_bad_config(tmp_path):
    path = str(tmp_path / "bad.lirc")
    write_lirc(path, {}, {"model": {"width": -3}})
    with pytest.raises(CheckpointError, match="config"):
        load_checkpoint(path)


def test_png_round_trip_lossless(tmp_path, rng):
    img = rng.integers(0, 256, (3, 7, 5)).astype(np.float32) / 255
    path = str(tmp_path / "a.png")
    write_png(img, path)
    np.testing.assert_array_equal(read_png(path), img)


def test_png_write_clamps_and_rounds_half_up(tmp_path):
    img = np.array([[[-0.2, 1.7, 0.5 / 255, 1.5 / 255]]] * 3, np.float64)
    path = str(tmp_path / "r.png")
    write_png(img, path)
    assert np.asarray(Image.open(path))[0, :, 0].tolist() == [0, 255, 1, 2]


def test_known_2x2_fixture(tmp_path):
    px = np.array([[[0, 0, 0], [255, 128, 64]], [[1, 2, 3], [10, 20, 30]]], np.uint8)
    path = str(tmp_path / "f.png")
    Image.fromarray(px, "RGB").save(path)
    out = read_png(path)
    assert out.shape == (3, 2, 2)
    np.testing.assert_allclose(out[:, 0, 1], [1.0, 128 / 255, 64 / 255], rtol=0, atol=1e-7)
    np.testing.assert_allclose(out[:, 1, 0], [1 / 255, 2 / 255, 3 / 255], rtol=0, atol=1e-7)


def test_grayscale_promoted(tmp_path):
    path = str(tmp_path / "g.png")
    Image.fromarray(np.array([[0, 51]], np.uint8), "L").save(path)
    out = read_png(path)
    assert out.shape == (3, 1, 2)
    np.testing.assert_allclose(out[:, 0, 1], [0.2] * 3, atol=1e-7)


def test_16bit_rejected(tmp_path):
    path = str(tmp_path / "d.png")
    Image.fromarray(np.array([[0, 60000]], np.uint16)).save(path)
    with pytest.raises(ImageFormatError, match="bit depth"):
        read_png(path)


def test_malformed_and_non_png(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"\x89PNG garbage")
    with pytest.raises(ImageFormatError):
        read_png(str(bad))
    jpg = str(tmp_path / "x.jpg")
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(jpg, format="JPEG")
    with pytest.raises(ImageFormatError, match="not a PNG"):
        read_png(jpg)
