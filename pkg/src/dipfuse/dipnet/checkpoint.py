"""Flat binary checkpoint of a parameter store (debugging aid).

Per tensor, little-endian: u32 name length, name bytes (UTF-8), u32 rank,
rank x u32 dims, then float32 values. Tensors follow store order.
"""

from __future__ import annotations

import struct

import numpy as np

from .network import ParameterStore
from .tensor import Tensor


def dump_params(params: ParameterStore) -> bytes:
    out = bytearray()
    for name, t in params.items():
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", t.values.ndim)
        out += struct.pack(f"<{t.values.ndim}I", *t.values.shape)
        out += np.ascontiguousarray(t.values, dtype="<f4").tobytes()
    return bytes(out)


def load_params(data: bytes, dtype: str = "float32") -> ParameterStore:
    store = ParameterStore()
    pos = 0
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise ValueError("truncated tensor data")
            vals = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            store[name] = Tensor(vals.astype(dtype), requires_grad=True, name=name)
    except struct.error as exc:
        raise ValueError(f"truncated checkpoint: {exc}") from exc
    return store
