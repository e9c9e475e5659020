"""Binary checkpoint container: named float64 arrays, bit-exact round trip.

Layout (all integers little-endian unsigned 32-bit):

    magic "XGPP" | version | repeated records until EOF
    record: name_len | name utf-8 | rank | dims[rank] | float64 data (LE)

Rank-0 records hold scalars (residual gains, step counters). Order is
preserved, so writing and reading the same model yields identical files.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["CheckpointError", "CheckpointWriteError", "MAGIC", "VERSION",
           "save_arrays", "load_arrays"]

MAGIC = b"XGPP"
VERSION = 1

_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or mismatched checkpoint files."""


class CheckpointWriteError(OSError):
    """Raised when a checkpoint cannot be written; message carries the path."""


def save_arrays(path, named_arrays) -> None:
    """Write an ordered mapping of name -> ndarray as one checkpoint file."""
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_U32.pack(VERSION))
            for name, arr in named_arrays.items():
                arr = np.asarray(arr, dtype=np.float64)
                encoded = name.encode("utf-8")
                fh.write(_U32.pack(len(encoded)))
                fh.write(encoded)
                fh.write(_U32.pack(arr.ndim))
                for dim in arr.shape:
                    fh.write(_U32.pack(dim))
                fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))
    except OSError as exc:
        raise CheckpointWriteError(f"cannot write checkpoint {path}: {exc}") from exc


def _read_exact(fh, count, path, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise CheckpointError(f"truncated checkpoint {path}: while reading {what}")
    return buf


def load_arrays(path) -> dict:
    """Read a checkpoint back into an insertion-ordered dict of float64 arrays."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"bad magic in checkpoint {path}")
        (version,) = _U32.unpack(_read_exact(fh, 4, path, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
        out = {}
        while True:
            head = fh.read(4)
            if not head:
                return out
            if len(head) != 4:
                raise CheckpointError(f"truncated checkpoint {path}: record header")
            (name_len,) = _U32.unpack(head)
            name = _read_exact(fh, name_len, path, "name").decode("utf-8")
            (rank,) = _U32.unpack(_read_exact(fh, 4, path, "rank"))
            dims = [
                _U32.unpack(_read_exact(fh, 4, path, f"dims of {name}"))[0]
                for _ in range(rank)
            ]
            count = int(np.prod(dims, dtype=np.int64)) if dims else 1
            raw = _read_exact(fh, count * 8, path, f"data of {name}")
            out[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
