"""Network weight blobs.

A blob is little-endian::

    magic   b"NNW1"
    u32     number of arrays
    per array:
        u16 name length, utf-8 name
        u8  dtype code (0 = f32, 1 = f64)
        u8  ndim, then ndim x u32 dims
        raw little-endian values, C order

Arrays are the trainable parameters plus batch-norm running statistics,
named ``<prefix><layer index>.<field>``.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .layers import BatchNorm2d, Sequential
from .nets import FusedNet

MAGIC = b"NNW1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _sequential_slots(net: Sequential, prefix: str):
    for i, layer in enumerate(net.layers):
        for p in layer.params:
            yield f"{prefix}{i}.{p.name}", layer, p.name
        if isinstance(layer, BatchNorm2d):
            yield f"{prefix}{i}.running_mean", layer, "running_mean"
            yield f"{prefix}{i}.running_var", layer, "running_var"


def _slots(net):
    if isinstance(net, FusedNet):
        for f, d in enumerate(net.decoders):
            yield from _sequential_slots(d, f"decoder{f}.")
        yield from _sequential_slots(net.head, "head.")
    else:
        yield from _sequential_slots(net, "")


def _get(layer, attr):
    value = getattr(layer, attr)
    return value if isinstance(value, np.ndarray) else value.data


def state_dict(net) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((name, np.array(_get(layer, attr))) for name, layer, attr in _slots(net))


def load_state_dict(net, state) -> None:
    for name, layer, attr in _slots(net):
        if name not in state:
            raise KeyError(f"missing array {name}")
        value = np.asarray(state[name])
        target = getattr(layer, attr)
        if isinstance(target, np.ndarray):
            if value.shape != target.shape:
                raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
            setattr(layer, attr, value.astype(target.dtype))
        else:
            if value.shape != target.data.shape:
                raise ValueError(f"{name}: shape {value.shape} != {target.data.shape}")
            target.data = value.astype(target.data.dtype)


def encode_state(state) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_DTYPES[_CODES[arr.dtype]]).tobytes())
    return b"".join(parts)


def decode_state(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    if buf[:4] != MAGIC:
        raise ValueError(f"bad magic {buf[:4]!r}")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    state = OrderedDict()
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + length].decode("utf-8")
            pos += length
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            dtype = _DTYPES[code]
            size = int(np.prod(shape)) * dtype.itemsize
            if pos + size > len(buf):
                raise ValueError(f"truncated array {name}")
            state[name] = np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)),
                                        offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise ValueError("truncated weight blob") from exc
    return state


def save_weights(net, path) -> None:
    Path(path).write_bytes(encode_state(state_dict(net)))


def load_weights(net, path) -> None:
    load_state_dict(net, decode_state(Path(path).read_bytes()))
