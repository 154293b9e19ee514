"""Binary checkpoint container.

Layout (all integers little-endian):
  magic "FINO" | u32 version | u64 step | u32 len + config text (utf-8)
  | u32 len + config sha256 hex | u32 tensor count | records.
Each record: u32 name length | name utf-8 | u8 dtype tag (0 = float64)
  | u8 rank | rank x u32 extents | raw little-endian float64 values.
Raw 64-bit values round-trip bit-exactly, so a reloaded model reproduces
forward passes exactly. Optimizer moments ride along under opt.m.* /
opt.v.* names plus the opt.t step counter.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FINO"
VERSION = 1
_DTYPE_F64 = 0


class CheckpointError(ValueError):
    pass


def _write_block(fh, data: bytes):
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def _read_block(fh):
    (n,) = struct.unpack("<I", _read(fh, 4))
    return _read(fh, n)


def save_checkpoint(path, tensors: dict, step: int, config_text: str, config_hash: str):
    """tensors: name -> float64 array, written in iteration order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", step))
        _write_block(fh, config_text.encode("utf-8"))
        _write_block(fh, config_hash.encode("utf-8"))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            _write_block(fh, name.encode("utf-8"))
            fh.write(struct.pack("<BB", _DTYPE_F64, arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Returns (tensors dict, step, config_text, config_hash)."""
    with open(path, "rb") as fh:
        if _read(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", _read(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (step,) = struct.unpack("<Q", _read(fh, 8))
        config_text = _read_block(fh).decode("utf-8")
        config_hash = _read_block(fh).decode("utf-8")
        (count,) = struct.unpack("<I", _read(fh, 4))
        tensors = {}
        for _ in range(count):
            name = _read_block(fh).decode("utf-8")
            dtype_tag, rank = struct.unpack("<BB", _read(fh, 2))
            if dtype_tag != _DTYPE_F64:
                raise CheckpointError(f"{path}: unknown dtype tag {dtype_tag}")
            shape = tuple(struct.unpack("<I", _read(fh, 4))[0] for _ in range(rank))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(_read(fh, 8 * n), dtype="<f8").reshape(shape)
            tensors[name] = arr.astype(np.float64)
        return tensors, step, config_text, config_hash
