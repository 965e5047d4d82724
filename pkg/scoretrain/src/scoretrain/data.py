"""Channel sample I/O and power normalization.

Training data arrives as a binary channel dump: magic "CHNL", u32 count,
u32 N, u32 M, then count*N*M complex entries as (f64 re, f64 im). Samples are
normalized to per-sample power N*M before training, matching the convention
the score networks assume at inference.
"""

import struct

import numpy as np

CHNL_MAGIC = b"CHNL"
_HEADER = struct.Struct("<4sIII")


class DataFormatError(ValueError):
    pass


def read_channel_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise DataFormatError("channel dump too short for header")
        magic, count, n, m = _HEADER.unpack(header)
        if magic != CHNL_MAGIC:
            raise DataFormatError(f"bad magic {magic!r}")
        body = fh.read(16 * count * n * m)
    if len(body) != 16 * count * n * m:
        raise DataFormatError(f"expected {count * n * m} entries, "
                              f"got {len(body) / 16:g}")
    return np.frombuffer(body, dtype="<c16").reshape(count, n, m).astype(complex)


def write_channel_dump(path, h: np.ndarray):
    h = np.asarray(h, dtype=complex)
    if h.ndim != 3:
        raise DataFormatError("expected (count, N, M) samples")
    count, n, m = h.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHNL_MAGIC, count, n, m))
        fh.write(np.ascontiguousarray(h, dtype="<c16").tobytes())


def normalize_power(h: np.ndarray) -> np.ndarray:
    """Scale each sample to ||H||_F^2 = N*M (zero samples are left alone)."""
    h = np.asarray(h, dtype=complex)
    count, n, m = h.shape
    norms = np.sqrt(np.sum(np.abs(h) ** 2, axis=(1, 2)))
    scale = np.where(norms > 0, np.sqrt(n * m) / np.where(norms > 0, norms, 1.0), 1.0)
    return h * scale[:, None, None]


def synthetic_gaussian(count: int, n: int, m: int, sigma2: float = 1.0,
                       seed: int = 0) -> np.ndarray:
    """I.i.d. CN(0, sigma2) toy channels for closed-form recovery tests."""
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((count, n, m))
            + 1j * rng.standard_normal((count, n, m))) * np.sqrt(sigma2 / 2)
