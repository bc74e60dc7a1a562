"""Versioned binary checkpoints: named float64 arrays plus JSON metadata.

Layout (little-endian)::

    b"MMCK" | u16 version | 64-byte ascii config hash | u32 meta length | meta json
    | u32 n_arrays | n * (u16 name length | name utf-8 | u8 ndim | ndim * u32 dims
    | raw f64 values) | sha256 of everything before
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct

import numpy as np

MAGIC = b"MMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigHashMismatch(CheckpointError):
    pass


def write_checkpoint(path, arrays: dict[str, np.ndarray], config_hash: str, meta: dict) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<H", VERSION))
    buf.write(config_hash.encode("ascii").ljust(64)[:64])
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta_blob)) + meta_blob)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() is C order; ascontiguousarray would promote 0-d
        key = name.encode()
        buf.write(struct.pack("<H", len(key)) + key)
        buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())
    os.replace(tmp, path)  # a crash leaves the previous checkpoint intact


def read_checkpoint(path, expect_hash: str | None = None):
    """Return ``(arrays, config_hash, meta)``; verify hash when given."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(data) < 32 + 74 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise CheckpointError(f"{path}: checksum mismatch or truncated file")
    (version,) = struct.unpack("<H", data[4:6])
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    config_hash = data[6:70].decode("ascii").strip()
    if expect_hash is not None and config_hash != expect_hash:
        raise ConfigHashMismatch(
            f"config-hash mismatch: checkpoint has {config_hash[:12]}..., expected {expect_hash[:12]}...")
    pos = 70
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos:pos + mlen])
    pos += mlen
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(n):
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + klen].decode()
        pos += klen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    return arrays, config_hash, meta


def load_into(params: dict, arrays: dict[str, np.ndarray], prefix: str) -> None:
    """Copy ``arrays[prefix + name]`` into each parameter, checking shapes."""
    for name, p in params.items():
        key = prefix + name
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {key!r}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {key!r}: {arrays[key].shape} vs {p.data.shape}")
        p.data[...] = arrays[key]
