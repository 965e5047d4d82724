"""Noise-level grids for multi-level score training.

Levels map integer SNRs to noise variances tau = 10^(-SNR/10) on unit-power
data. Loss weights are lambda1(tau) = tau for the first-order objective and
lambda2(tau) = tau^2 for the second-order one.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseLevelGrid:
    taus: tuple   # strictly increasing, at least one level

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if len(taus) < 1:
            raise ValueError("grid needs at least one level")
        if any(t <= 0 for t in taus):
            raise ValueError("noise levels must be positive")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("noise levels must be strictly increasing")
        object.__setattr__(self, "taus", taus)

    def __len__(self):
        return len(self.taus)

    @property
    def weights1(self):
        return np.asarray(self.taus)

    @property
    def weights2(self):
        return np.asarray(self.taus) ** 2

    @property
    def domain(self):
        return self.taus[0], self.taus[-1]

    @classmethod
    def from_snr_range(cls, snr_lo_db: int = -10, snr_hi_db: int = 30):
        """One level per integer SNR in [lo, hi], sorted ascending in tau."""
        snrs = range(int(snr_hi_db), int(snr_lo_db) - 1, -1)
        return cls(taus=tuple(10.0 ** (-s / 10.0) for s in snrs))
