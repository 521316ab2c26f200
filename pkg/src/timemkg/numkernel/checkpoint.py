"""Named-tensor archive.

Layout (little-endian)::

    b"TMKC" | u32 version | u32 manifest_len | manifest (UTF-8 JSON)
    repeated: u32 name_len | name | u32 ndim | ndim * u32 dims | float64 data
    32-byte SHA-256 over every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"TMKC"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray], manifest: dict | None = None):
    manifest = dict(manifest or {})
    manifest["tensors"] = {name: list(np.shape(arr)) for name, arr in tensors.items()}
    blob = bytearray()
    meta = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob += MAGIC + struct.pack("<II", VERSION, len(meta)) + meta
    for name in sorted(tensors):
        arr = np.array(tensors[name], dtype="<f8", order="C")
        key = name.encode("utf-8")
        blob += struct.pack("<I", len(key)) + key
        blob += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    blob += hashlib.sha256(blob).digest()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive written by :func:`save_checkpoint`; returns (tensors, manifest)."""
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint archive")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ParseError(f"{path}: checksum mismatch")
    version, meta_len = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    manifest = json.loads(body[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    tensors = {}
    while pos < len(body):
        (klen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        tensors[name] = arr.astype(np.float64)
    expected = manifest.get("tensors", {})
    for name, shape in expected.items():
        if name not in tensors or list(tensors[name].shape) != shape:
            raise ParseError(f"{path}: manifest disagrees with tensor {name!r}")
    return tensors, manifest
