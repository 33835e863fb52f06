"""Binary checkpoint format.

Layout: 8-byte magic, u32 version, u32 header length, JSON header, then raw
little-endian buffers back to back in header order. The header carries the
tensor manifest (name, shape, dtype) plus a free-form metadata dict (config
snapshot, initialization scheme, training counters).
"""

from __future__ import annotations

import json
import struct

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION"]

CHECKPOINT_MAGIC = b"CLKCKPT\x00"
CHECKPOINT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    manifest = []
    buffers = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        buffers.append(np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.name]).tobytes())
    header = json.dumps(
        {"tensors": manifest, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError(f"{path}: truncated buffer for tensor '{entry['name']}'")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(
                entry["dtype"]
            )
    return arrays, header.get("meta", {})
