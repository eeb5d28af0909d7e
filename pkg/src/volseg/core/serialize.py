"""Binary serialisation for tensors and model checkpoints.

Tensor blob layout (little endian throughout)::

    magic  b"VSTB" | u8 version (1) | u8 dtype code | u8 ndim | u8 reserved
    ndim * u64 extents | raw row-major data

Checkpoint layout::

    magic  b"VSCK" | u32 version (1)
    u32 json length | UTF-8 JSON metadata (model config and the like)
    u32 entry count | entries

Each entry is ``u16 name length | name UTF-8 | u8 kind (0 parameter,
1 buffer) | tensor blob``. Dtype codes: 1 float32, 2 float64.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import VolsegError

__all__ = [
    "SerializationError",
    "save_tensor",
    "load_tensor",
    "save_checkpoint",
    "load_checkpoint",
]

_TENSOR_MAGIC = b"VSTB"
_CKPT_MAGIC = b"VSCK"
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class SerializationError(VolsegError):
    """A blob or checkpoint fails to parse."""

    exit_code = 2


def _pack_array(arr: np.ndarray) -> bytes:
    shape = arr.shape
    arr = np.ascontiguousarray(arr)  # promotes 0-d; header keeps the true shape
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    head = _TENSOR_MAGIC + struct.pack(
        "<BBBB", 1, _DTYPE_CODES[arr.dtype], len(shape), 0
    )
    head += struct.pack(f"<{len(shape)}Q", *shape)
    if arr.dtype.byteorder == ">":
        arr = arr.byteswap().view(arr.dtype.newbyteorder("<"))
    return head + arr.tobytes()


def _unpack_array(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    if buf[offset : offset + 4] != _TENSOR_MAGIC:
        raise SerializationError("bad tensor blob magic")
    version, code, ndim, _ = struct.unpack_from("<BBBB", buf, offset + 4)
    if version != 1:
        raise SerializationError(f"unsupported tensor blob version {version}")
    if code not in _CODE_DTYPES:
        raise SerializationError(f"unknown dtype code {code}")
    offset += 8
    shape = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    nbytes = count * dtype.itemsize
    data = np.frombuffer(buf[offset : offset + nbytes], dtype=dtype.newbyteorder("<"))
    if data.size != count:
        raise SerializationError("tensor blob truncated")
    return data.astype(dtype).reshape(shape), offset + nbytes


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack_array(np.asarray(arr)))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = _unpack_array(buf, 0)
    if end != len(buf):
        raise SerializationError("trailing bytes after tensor blob")
    return arr


def save_checkpoint(path, params: dict, buffers: dict, meta: dict | None = None) -> None:
    """Write named parameter/buffer arrays plus a JSON metadata block."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [_CKPT_MAGIC, struct.pack("<I", 1), struct.pack("<I", len(meta_bytes)), meta_bytes]
    entries = [(name, 0, arr) for name, arr in params.items()]
    entries += [(name, 1, arr) for name, arr in buffers.items()]
    chunks.append(struct.pack("<I", len(entries)))
    for name, kind, arr in entries:
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", kind))
        chunks.append(_pack_array(np.asarray(arr)))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    """Read a checkpoint; returns ``(params, buffers, meta)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _CKPT_MAGIC:
        raise SerializationError(f"'{path}' is not a checkpoint file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != 1:
        raise SerializationError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", buf, 8)
    meta = json.loads(buf[12 : 12 + meta_len].decode("utf-8"))
    offset = 12 + meta_len
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + name_len].decode("utf-8")
        offset += name_len
        kind = buf[offset]
        offset += 1
        arr, offset = _unpack_array(buf, offset)
        (params if kind == 0 else buffers)[name] = arr
    if offset != len(buf):
        raise SerializationError("trailing bytes after checkpoint entries")
    return params, buffers, meta
