"""The ``EPO1`` binary epoch container.

Layout (all little-endian)::

    magic      4 bytes   b"EPO1"
    header     5 x u32   version, K, n_trials, C, T
               f32       fs
    names      C x (u16 byte length, utf-8 bytes)
    records    n_trials x (u16 label, i32 onset)      onset -1 means "none"
    payload    n_trials * C * T x f32                 trial-major, then channel-major

Samples are stored as float32, so a round trip is bit-exact for float32 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Epochs, Trial

MAGIC = b"EPO1"
VERSION = 1
_HEADER = struct.Struct("<5If")
_RECORD = np.dtype([("label", "<u2"), ("onset", "<i4")])
_MAX_DIM = 2**31


class EpochFileError(ValueError):
    """Malformed or unwritable EPO1 content."""


class BadMagicError(EpochFileError):
    pass


class TruncatedFileError(EpochFileError):
    pass


def encode_epochs(epochs: Epochs) -> bytes:
    n, C, T = len(epochs), epochs.n_channels, epochs.n_samples
    for name, value in (("K", epochs.class_count), ("n_trials", n), ("C", C), ("T", T)):
        if value >= _MAX_DIM:
            raise EpochFileError(f"{name}={value} is not representable (limit 2^31)")
    if epochs.class_count >= 2**16:
        raise EpochFileError("labels must fit in u16")
    parts = [MAGIC, _HEADER.pack(VERSION, epochs.class_count, n, C, T, epochs.fs)]
    for name in epochs.channel_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    records = np.empty(n, dtype=_RECORD)
    records["label"] = [t.label for t in epochs.trials]
    records["onset"] = [-1 if t.onset_sample is None else t.onset_sample for t in epochs.trials]
    parts.append(records.tobytes())
    parts.append(np.stack([t.data for t in epochs.trials]).astype("<f4").tobytes())
    return b"".join(parts)


def decode_epochs(buf: bytes) -> Epochs:
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    pos = 4
    if len(buf) < pos + _HEADER.size:
        raise TruncatedFileError("truncated header")
    version, K, n, C, T, fs = _HEADER.unpack_from(buf, pos)
    pos += _HEADER.size
    if version != VERSION:
        raise EpochFileError(f"unsupported EPO version {version}")
    names = []
    for _ in range(C):
        if len(buf) < pos + 2:
            raise TruncatedFileError("truncated channel names")
        (length,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) < pos + length:
            raise TruncatedFileError("truncated channel names")
        names.append(buf[pos:pos + length].decode("utf-8"))
        pos += length
    rec_bytes = n * _RECORD.itemsize
    if len(buf) < pos + rec_bytes:
        raise TruncatedFileError("truncated trial records")
    records = np.frombuffer(buf, dtype=_RECORD, count=n, offset=pos)
    pos += rec_bytes
    payload_bytes = n * C * T * 4
    if len(buf) < pos + payload_bytes:
        raise TruncatedFileError(f"truncated payload: need {payload_bytes} bytes, "
                                 f"have {len(buf) - pos}")
    if len(buf) > pos + payload_bytes:
        raise EpochFileError("trailing bytes after payload")
    payload = np.frombuffer(buf, dtype="<f4", count=n * C * T, offset=pos).reshape(n, C, T)
    bad = np.flatnonzero(records["label"] >= K)
    if bad.size:
        raise EpochFileError(f"trial {bad[0]} has label {records['label'][bad[0]]} >= K={K}")
    trials = tuple(
        Trial(data=payload[i].astype(np.float32), fs=float(fs), label=int(rec["label"]),
              onset_sample=None if rec["onset"] < 0 else int(rec["onset"]))
        for i, rec in enumerate(records))
    return Epochs(trials=trials, class_count=K, channel_names=tuple(names))


def write_epochs(epochs: Epochs, path) -> None:
    """Write ``epochs`` to ``path`` in the EPO1 format."""
    Path(path).write_bytes(encode_epochs(epochs))


def read_epochs(path) -> Epochs:
    """Read an EPO1 file written by :func:`write_epochs`."""
    return decode_epochs(Path(path).read_bytes())
