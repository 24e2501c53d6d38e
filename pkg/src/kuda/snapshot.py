"""Flat binary container for parameter snapshots.

Layout: magic bytes ``KUDA``, format version (u32 LE), then one record per
parameter: name length (u32), UTF-8 name, rank (u32), dims (u32 each), raw
little-endian float64 payload. Records run to end of file; names are written
in sorted order so files are byte-reproducible.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"KUDA"
VERSION = 1


class SnapshotError(Exception):
    pass


def save_snapshot(path, params: dict) -> None:
    """Write a name -> array (or Tensor) mapping to ``path``."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name in sorted(params):
            arr = params[name]
            arr = np.asarray(getattr(arr, "data", arr), dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_snapshot(path) -> dict[str, np.ndarray]:
    """Read a snapshot back into a name -> float64 array mapping."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise SnapshotError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported format version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    while pos < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", raw, pos) if rank else ()
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        out[name] = arr.astype(np.float64)
    return out
