"""Single-file checkpoint container: magic string, JSON header, raw tensor bytes.

Layout on disk:

    bytes 0..9    magic ``CTX2IMCK1\\n`` (format version baked into the string)
    bytes 10..17  little-endian uint64 header length
    header        UTF-8 JSON: {"meta": {...}, "tensors": [{name, dtype, shape,
                  offset, nbytes}, ...]} — offsets are relative to payload start
    payload       concatenated raw little-endian tensor bytes

Tensors round-trip bitwise: values are written with ``numpy.tobytes`` on
the contiguous CPU tensor and read back with ``numpy.frombuffer``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"CTX2IMCK1\n"

_DTYPES = {
    torch.float16: "<f2",
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int32: "<i4",
    torch.int64: "<i8",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    """Write atomically (temp file + rename); meta must be JSON-serializable."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for tensor {name!r}")
        raw = t.numpy().tobytes()
        entries.append(
            {
                "name": name,
                "dtype": _DTYPES[t.dtype],
                "shape": list(t.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read()
    tensors = {}
    for entry in header["tensors"]:
        dt = _TORCH_DTYPES.get(entry["dtype"])
        if dt is None:
            raise CheckpointError(f"{path}: unknown dtype {entry['dtype']!r}")
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        np_dt = np.dtype(entry["dtype"])
        arr = np.frombuffer(payload, dtype=np_dt, count=n // np_dt.itemsize, offset=start)
        tensors[entry["name"]] = torch.from_numpy(arr.copy()).reshape(entry["shape"])
    return tensors, header["meta"]
