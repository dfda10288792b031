"""Checkpoint container: 8-byte magic, u32 version, length-prefixed JSON
header, then raw little-endian float32 blobs in header-declared order."""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CIRNASCK"
VERSION = 1


class CheckpointError(IOError):
    pass


def save(path, header: dict, blobs: dict):
    """Write a checkpoint. `header` must be JSON-serializable; `blobs`
    maps names to float32 arrays, written in insertion order."""
    header = dict(header)
    header["blobs"] = [{"name": k, "shape": list(v.shape)} for k, v in blobs.items()]
    raw = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for v in blobs.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load(path):
    """Read a checkpoint back as (header, blobs)."""
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version, = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        hlen, = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        blobs = {}
        for spec in header["blobs"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            blobs[spec["name"]] = data.copy()
    return header, blobs
