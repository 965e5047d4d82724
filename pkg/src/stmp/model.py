"""Configuration and domain data types shared by the engine, generators, and harness.

All types are immutable (or treated as such) after construction, so they can be
shared freely across concurrent trial workers. Configuration files use a flat
``key = value`` text format; see ``parse_config`` for the accepted keys.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

DENOISER_KINDS = ("gaussian", "gaussian_mixture", "bridge")
CHANNEL_KINDS = ("iid_gaussian", "multipath")


class InvalidConfigError(ValueError):
    """A configuration field violates its invariant."""

    def __init__(self, field_name, reason):
        self.field = field_name
        self.reason = reason
        super().__init__(f"invalid config: {field_name}: {reason}")


@dataclass(frozen=True)
class SystemConfig:
    k: int = 100            # device count
    n: int = 8              # OFDM subcarriers
    m: int = 4              # BS antennas
    t: int = 30             # pilot OFDM symbols
    p: float = 1.0          # per-device transmit power (linear)
    lam: float = 0.1        # prior activity probability
    noise_var: float = 0.01  # AWGN variance per complex entry (linear)
    seed: int = 1

    def to_dict(self):
        return {
            "k": self.k, "n": self.n, "m": self.m, "t": self.t,
            "p": self.p, "lam": self.lam, "noise_var": self.noise_var,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class EngineConfig:
    max_iters: int = 30
    damping: float = 0.8       # convex weight on the current update
    threshold: float = 0.5     # activity decision threshold
    var_floor: float = 1e-12
    var_cap: float = 1e6
    tol: float = 1e-4          # relative-change stopping tolerance
    denoiser_kind: str = "gaussian"

    def to_dict(self):
        return {
            "max_iters": self.max_iters, "damping": self.damping,
            "threshold": self.threshold, "var_floor": self.var_floor,
            "var_cap": self.var_cap, "tol": self.tol,
            "denoiser_kind": self.denoiser_kind,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ChannelParams:
    """Parameters of the synthetic channel sampler."""

    kind: str = "iid_gaussian"
    paths: int = 8
    subcarrier_spacing_hz: float = 30e3
    delay_spread_range: tuple = (100e-9, 363e-9)   # seconds
    distance_range: tuple = (0.035, 0.2)           # km
    power_profile: str = "exponential"
    power_decay: Optional[float] = None            # None: 1/paths
    compensate_path_loss: bool = False             # force unit large-scale gains

    def to_dict(self):
        return {
            "kind": self.kind, "paths": self.paths,
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
            "delay_spread_range": list(self.delay_spread_range),
            "distance_range": list(self.distance_range),
            "power_profile": self.power_profile,
            "power_decay": self.power_decay,
            "compensate_path_loss": self.compensate_path_loss,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["delay_spread_range"] = tuple(d["delay_spread_range"])
        d["distance_range"] = tuple(d["distance_range"])
        return cls(**d)


@dataclass
class ChannelRealization:
    """Per-device channels, activity indicators, and large-scale gains.

    The effective channel X_k = alpha_k * H_k is always derived, never stored.
    """

    h: np.ndarray       # complex, (K, N, M)
    alpha: np.ndarray   # {0,1}, (K,)
    gains: np.ndarray   # linear power scale, (K,)

    def effective(self):
        return self.alpha[:, None, None] * self.h

    def to_dict(self):
        return {
            "h_re": self.h.real.tolist(), "h_im": self.h.imag.tolist(),
            "alpha": self.alpha.astype(int).tolist(),
            "gains": self.gains.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        h = np.asarray(d["h_re"], dtype=float) + 1j * np.asarray(d["h_im"], dtype=float)
        return cls(h=h, alpha=np.asarray(d["alpha"], dtype=np.int8),
                   gains=np.asarray(d["gains"], dtype=float))


@dataclass
class GaussianMessageSet:
    """Gaussian message over a (K, N, M) block: means plus one variance per antenna."""

    mean: np.ndarray   # complex, (K, N, M)
    var: np.ndarray    # positive, (M,)

    def copy(self):
        return GaussianMessageSet(self.mean.copy(), self.var.copy())

    def to_dict(self):
        return {
            "mean_re": self.mean.real.tolist(), "mean_im": self.mean.imag.tolist(),
            "var": self.var.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        mean = np.asarray(d["mean_re"], dtype=float) + 1j * np.asarray(d["mean_im"], dtype=float)
        return cls(mean=mean, var=np.asarray(d["var"], dtype=float))


@dataclass
class ActivityPosterior:
    lam_post: np.ndarray   # in [0,1], (K,)

    def to_dict(self):
        return {"lam_post": self.lam_post.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(lam_post=np.asarray(d["lam_post"], dtype=float))


def validate(cfg: SystemConfig, eng: EngineConfig, chan: Optional[ChannelParams] = None):
    """Check every type invariant; raise InvalidConfigError naming the violated field."""
    if not isinstance(cfg.k, int) or cfg.k < 1:
        raise InvalidConfigError("system.k", "K must be a positive integer")
    if not isinstance(cfg.n, int) or cfg.n < 1:
        raise InvalidConfigError("system.n", "N must be a positive integer")
    if not isinstance(cfg.m, int) or cfg.m < 1:
        raise InvalidConfigError("system.m", "M must be a positive integer")
    if not isinstance(cfg.t, int) or cfg.t < 1:
        raise InvalidConfigError("system.t", "T must be a positive integer")
    if cfg.t > cfg.k:
        raise InvalidConfigError("system.t", "T must not exceed K")
    if not cfg.p > 0:
        raise InvalidConfigError("system.p", "transmit power must be positive")
    if not (0 < cfg.lam <= 1):
        raise InvalidConfigError("system.lambda", "activity probability must be in (0, 1]")
    if not cfg.noise_var > 0:
        raise InvalidConfigError("system.noise_var", "noise variance must be positive")
    if cfg.seed < 0:
        raise InvalidConfigError("system.seed", "seed must be non-negative")

    if eng.max_iters < 1:
        raise InvalidConfigError("engine.max_iters", "iteration cap must be at least 1")
    if not (0 < eng.damping <= 1):
        raise InvalidConfigError("engine.damping", "damping factor must be in (0, 1]")
    if not (0 < eng.threshold < 1):
        raise InvalidConfigError("engine.threshold", "decision threshold must be in (0, 1)")
    if not (0 < eng.var_floor < eng.var_cap):
        raise InvalidConfigError("engine.var_floor", "need 0 < var_floor < var_cap")
    if not eng.tol > 0:
        raise InvalidConfigError("engine.tol", "stopping tolerance must be positive")
    if eng.denoiser_kind not in DENOISER_KINDS:
        raise InvalidConfigError("denoiser.kind", f"must be one of {DENOISER_KINDS}")

    if chan is not None:
        if chan.kind not in CHANNEL_KINDS:
            raise InvalidConfigError("channel.kind", f"must be one of {CHANNEL_KINDS}")
        if chan.paths < 0:
            raise InvalidConfigError("channel.paths", "path count must be non-negative")
        if not chan.subcarrier_spacing_hz > 0:
            raise InvalidConfigError("channel.subcarrier_spacing_hz", "must be positive")
        lo, hi = chan.delay_spread_range
        if not (0 <= lo <= hi):
            raise InvalidConfigError("channel.delay_spread_ns", "need 0 <= min <= max")
        dlo, dhi = chan.distance_range
        if not (0 < dlo <= dhi):
            raise InvalidConfigError("channel.distance_range", "need 0 < min <= max")
        if chan.power_profile not in ("exponential", "uniform"):
            raise InvalidConfigError("channel.power_profile", "unknown profile")


@dataclass(frozen=True)
class RunConfig:
    """Everything a simulation run needs, as parsed from one config file."""

    system: SystemConfig = field(default_factory=SystemConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    snr_db: Optional[float] = None   # overrides system.noise_var per trial when set


def _parse_pair_ns(raw):
    # divide by the exactly-representable 1e9 so integer-ns values parse to
    # the same double as the corresponding e-9 literal
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) == 1:
        v = float(parts[0]) / 1e9
        return (v, v)
    if len(parts) == 2:
        return (float(parts[0]) / 1e9, float(parts[1]) / 1e9)
    raise ValueError("expected one or two comma-separated values")


def parse_config(text: str) -> RunConfig:
    """Parse flat ``key = value`` config text. Unknown keys are an error.

    Accepted keys: system.{k,n,m,t,p,lambda,noise_var,seed},
    engine.{max_iters,damping,threshold,tol,var_floor,var_cap}, denoiser.kind,
    channel.{kind,paths,delay_spread_ns,subcarrier_spacing_hz}, snr.db.
    Blank lines and ``#`` comments are ignored.
    """
    sys_kw, eng_kw, chan_kw = {}, {}, {}
    snr_db = None
    setters = {
        "system.k": lambda v: sys_kw.__setitem__("k", int(v)),
        "system.n": lambda v: sys_kw.__setitem__("n", int(v)),
        "system.m": lambda v: sys_kw.__setitem__("m", int(v)),
        "system.t": lambda v: sys_kw.__setitem__("t", int(v)),
        "system.p": lambda v: sys_kw.__setitem__("p", float(v)),
        "system.lambda": lambda v: sys_kw.__setitem__("lam", float(v)),
        "system.noise_var": lambda v: sys_kw.__setitem__("noise_var", float(v)),
        "system.seed": lambda v: sys_kw.__setitem__("seed", int(v)),
        "engine.max_iters": lambda v: eng_kw.__setitem__("max_iters", int(v)),
        "engine.damping": lambda v: eng_kw.__setitem__("damping", float(v)),
        "engine.threshold": lambda v: eng_kw.__setitem__("threshold", float(v)),
        "engine.tol": lambda v: eng_kw.__setitem__("tol", float(v)),
        "engine.var_floor": lambda v: eng_kw.__setitem__("var_floor", float(v)),
        "engine.var_cap": lambda v: eng_kw.__setitem__("var_cap", float(v)),
        "denoiser.kind": lambda v: eng_kw.__setitem__("denoiser_kind", v),
        "channel.kind": lambda v: chan_kw.__setitem__("kind", v),
        "channel.paths": lambda v: chan_kw.__setitem__("paths", int(v)),
        "channel.delay_spread_ns": lambda v: chan_kw.__setitem__(
            "delay_spread_range", _parse_pair_ns(v)),
        "channel.subcarrier_spacing_hz": lambda v: chan_kw.__setitem__(
            "subcarrier_spacing_hz", float(v)),
    }

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "snr.db":
            snr_db = float(raw)
            continue
        if key not in setters:
            raise InvalidConfigError(key, "unknown config key")
        try:
            setters[key](raw)
        except InvalidConfigError:
            raise
        except ValueError as exc:
            raise InvalidConfigError(key, f"bad value {raw!r}: {exc}") from exc

    run = RunConfig(system=SystemConfig(**sys_kw), engine=EngineConfig(**eng_kw),
                    channel=ChannelParams(**chan_kw), snr_db=snr_db)
    validate(run.system, run.engine, run.channel)
    return run


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def render_config(run: RunConfig) -> str:
    """Inverse of parse_config for the keys it understands.

    Floats round-trip exactly through repr except the ns-denominated delay
    spread, which round-trips to within an ulp of the stored seconds value.
    """
    s, e, c = run.system, run.engine, run.channel
    lines = [
        f"system.k = {s.k}", f"system.n = {s.n}", f"system.m = {s.m}",
        f"system.t = {s.t}", f"system.p = {s.p!r}", f"system.lambda = {s.lam!r}",
        f"system.noise_var = {s.noise_var!r}", f"system.seed = {s.seed}",
        f"engine.max_iters = {e.max_iters}", f"engine.damping = {e.damping!r}",
        f"engine.threshold = {e.threshold!r}", f"engine.tol = {e.tol!r}",
        f"engine.var_floor = {e.var_floor!r}", f"engine.var_cap = {e.var_cap!r}",
        f"denoiser.kind = {e.denoiser_kind}",
        f"channel.kind = {c.kind}", f"channel.paths = {c.paths}",
        "channel.delay_spread_ns = {0!r},{1!r}".format(
            c.delay_spread_range[0] * 1e9, c.delay_spread_range[1] * 1e9),
        f"channel.subcarrier_spacing_hz = {c.subcarrier_spacing_hz!r}",
    ]
    if run.snr_db is not None:
        lines.append(f"snr.db = {run.snr_db!r}")
    return "\n".join(lines) + "\n"


def with_overrides(run: RunConfig, **kw) -> RunConfig:
    """Return a copy of run with dotted-path overrides applied (sweeps)."""
    sys_cfg, snr = run.system, run.snr_db
    for key, value in kw.items():
        if key == "snr_db":
            snr = value
        elif key in ("k", "t"):
            sys_cfg = replace(sys_cfg, **{key: int(value)})
        elif key == "lam":
            sys_cfg = replace(sys_cfg, lam=float(value))
        else:
            raise InvalidConfigError(key, "unknown sweep axis")
    return RunConfig(system=sys_cfg, engine=run.engine, channel=run.channel, snr_db=snr)
