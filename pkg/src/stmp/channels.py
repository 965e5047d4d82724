"""Synthetic multipath channel sampling, device activity, and the noisy observation.

The multipath model is a sum of L outer products of temporal and spatial
steering vectors with CN(0,1) path coefficients and normalized path powers,
scaled by a large-scale gain from a log-distance path loss law. The
``iid_gaussian`` kind replaces the multipath structure by i.i.d. CN(0, g_k)
entries. All sampling is driven by an explicitly passed seeded generator, so
the full pipeline is bit-reproducible.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .model import ChannelParams, ChannelRealization, SystemConfig
from .pilots import PilotOperator, apply_pilot

CHNL_MAGIC = b"CHNL"


class NonPositiveDistanceError(ValueError):
    pass


@dataclass
class PathSet:
    """One multipath draw: coefficients, powers, delays, angles of arrival."""

    beta: np.ndarray   # complex CN(0,1) coefficients, (L,)
    rho: np.ndarray    # non-negative powers summing to 1, (L,)
    tau: np.ndarray    # delays in seconds, (L,)
    phi: np.ndarray    # angles in (-pi/2, pi/2), (L,)

    def __len__(self):
        return len(self.beta)


def steering_time(tau: float, n: int, delta_f: float) -> np.ndarray:
    """Unit-norm temporal steering vector across n subcarriers spaced delta_f apart."""
    return np.exp(-2j * np.pi * delta_f * tau * np.arange(n)) / np.sqrt(n)


def steering_space(phi: float, m: int) -> np.ndarray:
    """Unit-norm spatial steering vector for a half-wavelength ULA of m antennas."""
    return np.exp(-1j * np.pi * np.sin(phi) * np.arange(m)) / np.sqrt(m)


def path_powers(profile: str, count: int, decay=None) -> np.ndarray:
    """Normalized per-path powers; exponential decay rate defaults to 1/count."""
    if count == 0:
        return np.zeros(0)
    if profile == "uniform":
        return np.full(count, 1.0 / count)
    if profile == "exponential":
        rate = (1.0 / count) if decay is None else decay
        w = np.exp(-rate * np.arange(count))
        return w / w.sum()
    raise ValueError(f"unknown power profile {profile!r}")


def sample_paths(params: ChannelParams, rng: np.random.Generator) -> PathSet:
    l = params.paths
    spread = rng.uniform(*params.delay_spread_range)
    tau = rng.uniform(0.0, spread, size=l)
    phi = rng.uniform(-np.pi / 2, np.pi / 2, size=l)
    beta = (rng.standard_normal(l) + 1j * rng.standard_normal(l)) / np.sqrt(2)
    rho = path_powers(params.power_profile, l, params.power_decay)
    return PathSet(beta=beta, rho=rho, tau=tau, phi=phi)


def synth_channel(paths: PathSet, n: int, m: int, delta_f: float) -> np.ndarray:
    """Sum of rank-one steering outer products; E||H||_F^2 = 1 under CN(0,1) betas."""
    h = np.zeros((n, m), dtype=complex)
    for beta, rho, tau, phi in zip(paths.beta, paths.rho, paths.tau, paths.phi):
        h += beta * np.sqrt(rho) * np.outer(steering_time(tau, n, delta_f),
                                            np.conj(steering_space(phi, m)))
    return h


def path_loss(d_km) -> np.ndarray:
    """Linear large-scale gain, -128.1 - 36.7*log10(d) dB at distance d in km."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise NonPositiveDistanceError("distance must be positive")
    return 10.0 ** ((-128.1 - 36.7 * np.log10(d)) / 10.0)


def per_entry_power(params: ChannelParams, gains: np.ndarray, n: int, m: int) -> np.ndarray:
    """Expected |h_knm|^2 per device: gains for iid entries, gains/(N*M) for multipath."""
    if params.kind == "iid_gaussian":
        return gains
    return gains / (n * m)


def sample_realization(cfg: SystemConfig, params: ChannelParams,
                       rng: np.random.Generator) -> ChannelRealization:
    """Draw activity, distances/gains, and per-device channels."""
    alpha = (rng.random(cfg.k) < cfg.lam).astype(np.int8)
    distances = rng.uniform(*params.distance_range, size=cfg.k)
    gains = np.ones(cfg.k) if params.compensate_path_loss else path_loss(distances)
    if params.kind == "iid_gaussian":
        h = (rng.standard_normal((cfg.k, cfg.n, cfg.m))
             + 1j * rng.standard_normal((cfg.k, cfg.n, cfg.m))) * np.sqrt(gains / 2)[:, None, None]
    elif params.kind == "multipath":
        h = np.empty((cfg.k, cfg.n, cfg.m), dtype=complex)
        for k in range(cfg.k):
            ps = sample_paths(params, rng)
            h[k] = np.sqrt(gains[k]) * synth_channel(ps, cfg.n, cfg.m,
                                                     params.subcarrier_spacing_hz)
    else:
        raise ValueError(f"unknown channel kind {params.kind!r}")
    return ChannelRealization(h=h, alpha=alpha, gains=gains)


def observe(real: ChannelRealization, pilot: PilotOperator, noise_var: float,
            rng: np.random.Generator) -> np.ndarray:
    """Y = Q X + N with X_k = alpha_k H_k and i.i.d. CN(0, noise_var) entries."""
    k, n, m = real.h.shape
    if k != pilot.k or n != pilot.n:
        raise ValueError(f"realization {real.h.shape} does not match pilot "
                         f"({pilot.k}, {pilot.n})")
    y = apply_pilot(pilot, real.effective())
    noise = (rng.standard_normal((n * pilot.t, m))
             + 1j * rng.standard_normal((n * pilot.t, m))) * np.sqrt(noise_var / 2)
    return y + noise


def write_channel_dump(path, h: np.ndarray):
    """Binary dump of channel samples for the score trainer: (count, N, M) complex."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 3:
        raise ValueError("expected an array of shape (count, N, M)")
    count, n, m = h.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", CHNL_MAGIC, count, n, m))
        fh.write(np.ascontiguousarray(h, dtype="<c16").tobytes())


def read_channel_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIII"))
        magic, count, n, m = struct.unpack("<4sIII", header)
        if magic != CHNL_MAGIC:
            raise ValueError(f"not a channel dump (magic {magic!r})")
        data = np.frombuffer(fh.read(16 * count * n * m), dtype="<c16")
    if data.size != count * n * m:
        raise ValueError("truncated channel dump")
    return data.reshape(count, n, m).astype(complex)
