"""Binary checkpoint container: bitwise round trips and corruption handling."""

import struct

import pytest
import torch

from ctx2im.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint


def sample_tensors():
    g = torch.Generator().manual_seed(0)
    return {
        "float32": torch.randn(3, 4, generator=g),
        "float64": torch.randn(5, generator=g, dtype=torch.float64),
        "half": torch.randn(2, 2, generator=g).half(),
        "int64": torch.arange(7),
        "int32": torch.arange(6, dtype=torch.int32).view(2, 3),
        "uint8": torch.arange(256, dtype=torch.uint8),
        "flags": torch.tensor([True, False, True]),
        "empty": torch.zeros(0, 3),
        "scalarish": torch.tensor([3.25]),
    }


def test_roundtrip_is_bitwise(tmp_path):
    path = tmp_path / "state.ckpt"
    meta = {"kind": "test", "nested": {"alpha": 0.5, "names": ["a", "b"]}, "count": 3}
    tensors = sample_tensors()
    save_checkpoint(path, tensors, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(tensors)
    for name, t in tensors.items():
        assert loaded[name].dtype == t.dtype, name
        assert loaded[name].shape == t.shape, name
        assert torch.equal(loaded[name], t), name


def test_save_is_deterministic(tmp_path):
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    save_checkpoint(a, sample_tensors(), {"x": 1})
    save_checkpoint(b, sample_tensors(), {"x": 1})
    assert a.read_bytes() == b.read_bytes()


def test_no_temp_file_left_behind(tmp_path):
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, sample_tensors(), {})
    assert [p.name for p in tmp_path.iterdir()] == ["state.ckpt"]


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTACKPT!\n" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, {"w": torch.randn(16, 16)}, {})
    blob = path.read_bytes()
    path.write_bytes(blob[:-100])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_unknown_dtype_in_header_rejected(tmp_path):
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, {"w": torch.randn(2)}, {})
    blob = bytearray(path.read_bytes())
    # corrupt the dtype tag inside the JSON header
    idx = blob.find(b"<f4")
    blob[idx : idx + 3] = b"<f9"
    (header_len,) = struct.unpack("<Q", bytes(blob[len(MAGIC) : len(MAGIC) + 8]))
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="dtype"):
        load_checkpoint(path)


def test_unsupported_tensor_dtype_on_save(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        save_checkpoint(tmp_path / "x.ckpt", {"c": torch.zeros(2, dtype=torch.complex64)}, {})
