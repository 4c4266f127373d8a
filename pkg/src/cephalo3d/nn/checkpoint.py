"""CW3D weight checkpoint: named float32 blocks, little-endian.

Layout::

    b"CW3D0001"
    u32 block count
    per block: u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 values (C order)

Optimizer accumulators follow the parameters as extra blocks named
``<param>.Eg2`` and ``<param>.Edx2``; the block count covers them too.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from ..errors import FileFormatError

MAGIC = b"CW3D0001"
_U32 = struct.Struct("<I")


def dumps(blocks: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(len(blocks))]
    for name, arr in blocks.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise FileFormatError(f"bad checkpoint magic {buf[:8]!r}")
    pos = 8

    def u32():
        nonlocal pos
        if pos + 4 > len(buf):
            raise FileFormatError("truncated checkpoint")
        (v,) = _U32.unpack_from(buf, pos)
        pos += 4
        return v

    blocks = OrderedDict()
    for _ in range(u32()):
        n = u32()
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * count
        if end > len(buf):
            raise FileFormatError(f"truncated data for block {name!r}")
        blocks[name] = np.frombuffer(buf[pos:end], dtype="<f4").reshape(shape).astype(np.float32)
        pos = end
    if pos != len(buf):
        raise FileFormatError(f"{len(buf) - pos} trailing bytes after last block")
    return blocks


def save(path, params, optimizer=None) -> None:
    blocks = OrderedDict((p.name, p.value) for p in params)
    if optimizer is not None:
        for p in params:
            blocks[p.name + ".Eg2"] = optimizer.state.eg2[p.name]
            blocks[p.name + ".Edx2"] = optimizer.state.edx2[p.name]
    Path(path).write_bytes(dumps(blocks))


def load(path, params, optimizer=None) -> None:
    """Copy stored values into ``params`` (and optimizer accumulators, if present)."""
    blocks = loads(Path(path).read_bytes())
    for p in params:
        if p.name not in blocks:
            raise FileFormatError(f"checkpoint lacks parameter block {p.name!r}")
        stored = blocks[p.name]
        if stored.shape != p.value.shape:
            raise FileFormatError(f"block {p.name!r}: stored shape {stored.shape} != model shape {p.value.shape}")
        p.value[...] = stored
        if optimizer is not None and p.name + ".Eg2" in blocks:
            optimizer.state.eg2[p.name][...] = blocks[p.name + ".Eg2"]
            optimizer.state.edx2[p.name][...] = blocks[p.name + ".Edx2"]
