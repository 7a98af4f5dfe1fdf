"""
Checkpoint file: a JSON manifest plus a named-tensor table.

Layout (all integers little-endian)::

    b"HD3DCKPT" u32 version
    u32 manifest_length, manifest (UTF-8 JSON, sorted keys)
    u32 tensor_count
    per tensor: u16 name_length, name, u8 dtype_length, dtype (numpy str, e.g. "<f4"),
                u8 ndim, u32 dims[ndim], raw little-endian values
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError

MAGIC = b"HD3DCKPT"
VERSION = 1


def encode_tensors(tensors: dict, manifest: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta = json.dumps(manifest, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False))
        name_b = name.encode()
        dtype_b = arr.dtype.str.encode()
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", len(dtype_b)))
        buf.write(dtype_b)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode_tensors(data: bytes, source="checkpoint") -> tuple[dict, dict]:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{source}: truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<I", take(4))
    try:
        manifest = json.loads(bytes(take(mlen)).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt manifest") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (dlen,) = struct.unpack("<B", take(1))
        dtype = np.dtype(bytes(take(dlen)).decode())
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(bytes(take(nbytes)), dtype=dtype).reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(dtype.newbyteorder("="), copy=True))
    if pos != len(view):
        raise CheckpointError(f"{source}: trailing bytes after tensor table")
    return manifest, tensors


def save_checkpoint(path, model: torch.nn.Module, manifest: dict) -> str:
    """Write the model's state and ``manifest``; returns the file's sha256."""
    data = encode_tensors(model.state_dict(), manifest)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return decode_tensors(path.read_bytes(), source=str(path))


def load_state(model: torch.nn.Module, tensors: dict) -> None:
    expected = model.state_dict()
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(f"checkpoint/model mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, value in tensors.items():
        if tuple(value.shape) != tuple(expected[name].shape):
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {tuple(value.shape)}, model {tuple(expected[name].shape)}"
            )
    model.load_state_dict({k: v.to(expected[k].dtype) for k, v in tensors.items()})


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
