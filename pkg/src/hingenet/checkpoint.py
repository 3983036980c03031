"""Bit-exact "HNGW" checkpoint container.

Layout: magic bytes ``HNGW``, u32 LE version (=1), u32 LE tensor count, then
per tensor: u16 LE name length, UTF-8 name, u8 ndim, ndim u64 LE dims, and
the row-major payload. Payloads are f32 LE except for tensors whose name
ends in ``/mask`` or ``/mode``, which are stored as u8 (one byte per entry,
values 0/1 for masks, 0/1/2 for layer modes). Tensor order follows the
model's topological layer order; a hinged layer contributes W, then A, then
its mask.
"""

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"HNGW"
VERSION = 1


class CheckpointError(IOError):
    """Malformed or truncated checkpoint data."""


def _is_byte_tensor(name: str) -> bool:
    return name.endswith("/mask") or name.endswith("/mode")


def save(path, tensors: "OrderedDict[str, np.ndarray]") -> None:
    """Write tensors to `path`. Float tensors are stored as f32; insertion
    order is preserved byte-for-byte."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if not _is_byte_tensor(name) and not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {name!r} contains non-finite entries")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<Q", d)
        if _is_byte_tensor(name):
            payload = np.ascontiguousarray(arr, dtype=np.uint8)
        else:
            payload = np.ascontiguousarray(arr, dtype="<f4")
        blob += payload.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load(path) -> "OrderedDict[str, np.ndarray]":
    """Read a checkpoint; float tensors come back as float64, byte tensors
    as uint8."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic, not an HNGW checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", take(4))

    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        n_items = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        if _is_byte_tensor(name):
            raw = np.frombuffer(take(n_items), dtype=np.uint8)
            tensors[name] = raw.reshape(dims).copy()
        else:
            raw = np.frombuffer(take(4 * n_items), dtype="<f4")
            tensors[name] = raw.astype(np.float64).reshape(dims)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors
