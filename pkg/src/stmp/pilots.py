"""Partial-orthogonal pilot operator built from row-selected scaled DFT matrices.

Per subcarrier n, the length-K pilot vectors across devices are sqrt(K*P) times
T distinct rows of the unitary K-point DFT matrix, so the stacked operator Q
satisfies Q Q^H = K*P*I. Forward/adjoint application runs through length-K
FFTs; ``dense`` materializes Q for small instances as a test oracle.

Observation stacking is (t outer, n inner): flat row index = t*N + n.
Unknown-column stacking is (k outer, n inner): flat column index = k*N + n.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .model import InvalidConfigError, SystemConfig

PILOT_MAGIC = b"PILT"

# dense materialization guard: NT * NK entries
DENSE_MAX_ENTRIES = 2 ** 22


class DimensionMismatchError(ValueError):
    pass


class TooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class PilotOperator:
    kind: str          # only "dft"
    rows: np.ndarray   # (N, T) int, distinct within each row of the array
    k: int
    n: int
    t: int
    p: float           # per-device transmit power

    @property
    def scale(self):
        return np.sqrt(self.k * self.p)


def build_pilot(cfg: SystemConfig, rng: np.random.Generator) -> PilotOperator:
    """Draw T distinct DFT-row indices per subcarrier, uniformly without replacement."""
    if cfg.t > cfg.k:
        raise InvalidConfigError("system.t", "T must not exceed K")
    rows = np.empty((cfg.n, cfg.t), dtype=np.int64)
    for n in range(cfg.n):
        rows[n] = rng.choice(cfg.k, size=cfg.t, replace=False)
    return PilotOperator(kind="dft", rows=rows, k=cfg.k, n=cfg.n, t=cfg.t, p=cfg.p)


def apply_pilot(op: PilotOperator, x: np.ndarray) -> np.ndarray:
    """Compute Q x for x of shape (K, N) or (K, N, M); output (N*T,) or (N*T, M)."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    if x.shape[0] != op.k or x.shape[1] != op.n:
        raise DimensionMismatchError(f"expected ({op.k}, {op.n}, ...), got {x.shape}")
    # unitary DFT per subcarrier, then select the drawn rows
    f = np.fft.fft(x, axis=0) / np.sqrt(op.k)
    gathered = f[op.rows.T, np.arange(op.n)[None, :], :]        # (T, N, M)
    out = op.scale * gathered.reshape(op.t * op.n, x.shape[2])
    return out[:, 0] if squeeze else out


def adjoint_pilot(op: PilotOperator, y: np.ndarray) -> np.ndarray:
    """Compute Q^H y; exact adjoint of apply_pilot (scatter, then inverse DFT)."""
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    if y.shape[0] != op.n * op.t:
        raise DimensionMismatchError(f"expected length {op.n * op.t}, got {y.shape[0]}")
    z = np.zeros((op.k, op.n, y.shape[1]), dtype=complex)
    # rows are distinct within each subcarrier, so plain assignment is collision-free
    z[op.rows.T, np.arange(op.n)[None, :], :] = y.reshape(op.t, op.n, y.shape[1])
    x = op.scale * np.sqrt(op.k) * np.fft.ifft(z, axis=0)
    return x[:, :, 0] if squeeze else x


def dense_pilot(op: PilotOperator) -> np.ndarray:
    """Materialize Q explicitly, (N*T, N*K). Test oracle; guarded by size."""
    nt, nk = op.n * op.t, op.n * op.k
    if nt * nk > DENSE_MAX_ENTRIES:
        raise TooLargeError(f"dense pilot would have {nt * nk} entries")
    ii, kk = np.meshgrid(np.arange(op.k), np.arange(op.k), indexing="ij")
    u = np.exp(-2j * np.pi * ii * kk / op.k) / np.sqrt(op.k)
    q = np.zeros((nt, nk), dtype=complex)
    for t in range(op.t):
        for n in range(op.n):
            q[t * op.n + n, n::op.n] = op.scale * u[op.rows[n, t], :]
    return q


def write_pilot(op: PilotOperator, path):
    """Binary export: magic, u32 K/N/T, f64 P, then N*T u32 rows (n outer, t inner)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIId", PILOT_MAGIC, op.k, op.n, op.t, op.p))
        fh.write(op.rows.astype("<u4").tobytes())


def read_pilot(path) -> PilotOperator:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIIId"))
        magic, k, n, t, p = struct.unpack("<4sIIId", header)
        if magic != PILOT_MAGIC:
            raise ValueError(f"not a pilot file (magic {magic!r})")
        rows = np.frombuffer(fh.read(4 * n * t), dtype="<u4").reshape(n, t)
    return PilotOperator(kind="dft", rows=rows.astype(np.int64), k=k, n=n, t=t, p=p)
