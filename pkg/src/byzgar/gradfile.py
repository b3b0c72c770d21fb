"""Binary gradient files.

Layout, all little-endian::

    offset 0   8 bytes   magic b"GARBIN01"
    offset 8   u32       n (number of gradients)
    offset 12  u32       d (dimension)
    offset 16  n*d f64   payload, row-major (gradient i contiguous)

The file size must be exactly ``16 + 8*n*d``. Values round-trip bit-exactly.
"""

from __future__ import annotations

import os
import struct

import numpy as np

__all__ = ["MAGIC", "HEADER_SIZE", "GradientFileError", "read_gradients", "write_gradients", "decode", "encode"]

MAGIC = b"GARBIN01"
HEADER_SIZE = 16
_HEADER = struct.Struct("<8sII")
_DTYPE = np.dtype("<f8")


class GradientFileError(ValueError):
    """Malformed gradient file; ``offset`` is the first offending byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


def decode(buf: bytes) -> np.ndarray:
    """Parse the bytes of a gradient file into an ``(n, d)`` float64 array."""
    if len(buf) < HEADER_SIZE:
        raise GradientFileError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes", len(buf))
    magic, n, d = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise GradientFileError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if n < 1:
        raise GradientFileError("gradient count n must be >= 1", 8)
    if d < 1:
        raise GradientFileError("dimension d must be >= 1", 12)
    expected = HEADER_SIZE + 8 * n * d
    if len(buf) < expected:
        raise GradientFileError(
            f"truncated payload: expected {expected} bytes for n={n}, d={d}, got {len(buf)}", len(buf)
        )
    if len(buf) > expected:
        raise GradientFileError(f"{len(buf) - expected} trailing bytes after payload", expected)
    data = np.frombuffer(buf, dtype=_DTYPE, count=n * d, offset=HEADER_SIZE)
    bad = ~np.isfinite(data)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise GradientFileError(
            f"non-finite value {data[i]!r} at gradient {i // d}, component {i % d}", HEADER_SIZE + 8 * i
        )
    return data.astype(np.float64).reshape(n, d)


def encode(gradients) -> bytes:
    batch = np.asarray(gradients, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch.reshape(1, -1)
    if batch.ndim != 2 or batch.shape[0] < 1 or batch.shape[1] < 1:
        raise ValueError(f"expected a non-empty (n, d) array, got shape {batch.shape}")
    if batch.shape[0] > 0xFFFFFFFF or batch.shape[1] > 0xFFFFFFFF:
        raise ValueError(f"shape {batch.shape} does not fit in 32-bit counts")
    if not np.all(np.isfinite(batch)):
        raise ValueError("refusing to write non-finite values")
    return _HEADER.pack(MAGIC, batch.shape[0], batch.shape[1]) + batch.astype(_DTYPE).tobytes(order="C")


def read_gradients(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write_gradients(path: str | os.PathLike, gradients) -> None:
    data = encode(gradients)
    with open(path, "wb") as fh:
        fh.write(data)
