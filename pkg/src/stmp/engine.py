"""Turbo message-passing engine for joint activity detection and channel estimation.

One iteration alternates a per-antenna LMMSE step against the pilot operator
(module A) with a denoising step (module B) that splits into a channel
denoiser, a Bernoulli activity update, and a Bernoulli-Gaussian recombination,
exchanging extrinsic Gaussian messages between the two modules. Damping mixes
each module input with the previous iteration's raw extrinsic output.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import EngineConfig, GaussianMessageSet, SystemConfig
from .pilots import PilotOperator, adjoint_pilot, apply_pilot


class DivergedError(RuntimeError):
    pass


class NonPositiveVarianceError(ValueError):
    pass


@dataclass
class IterationTrace:
    """Per-iteration diagnostics; list lengths equal iterations executed."""

    residual: list = field(default_factory=list)
    nmse_db: list = field(default_factory=list)      # nan without ground truth
    v_pri_mean: list = field(default_factory=list)
    v_post_mean: list = field(default_factory=list)
    tau_pri: list = field(default_factory=list)
    clamps: list = field(default_factory=list)
    ms: list = field(default_factory=list)

    def __len__(self):
        return len(self.residual)

    def to_csv(self) -> str:
        lines = ["iter,residual,nmse_db,v_pri_mean,v_post_mean,tau_pri,clamps,ms"]
        for i in range(len(self)):
            lines.append(",".join([
                str(i),
                format(self.residual[i], ".10g"),
                format(self.nmse_db[i], ".10g"),
                format(self.v_pri_mean[i], ".10g"),
                format(self.v_post_mean[i], ".10g"),
                format(self.tau_pri[i], ".10g"),
                str(self.clamps[i]),
                format(self.ms[i], ".10g"),
            ]))
        return "\n".join(lines) + "\n"


@dataclass
class EngineState:
    """Message bookkeeping for one trial (single-threaded mutation)."""

    a_pri: GaussianMessageSet
    b_pri: Optional[GaussianMessageSet] = None
    b_ext: Optional[GaussianMessageSet] = None
    h_ext: Optional[GaussianMessageSet] = None
    lam_post: Optional[np.ndarray] = None
    iter_count: int = 0
    prev_ext_a: Optional[GaussianMessageSet] = None  # raw (undamped) extrinsics
    prev_ext_b: Optional[GaussianMessageSet] = None


@dataclass
class EngineResult:
    h_post: np.ndarray        # channel denoiser output at the last iteration
    x_post: np.ndarray        # module-B posterior of the effective channel
    alpha_hat: np.ndarray
    lam_post: np.ndarray
    trace: IterationTrace
    iterations: int
    converged: bool


def lmmse_update(y: np.ndarray, pilot: PilotOperator, x_pri: np.ndarray,
                 v_pri: np.ndarray, noise_var: float):
    """Per-antenna LMMSE posterior under the partial-orthogonal pilot.

    x_post = x_pri + v/(K*P*v + nv) * Q^H (y - Q x_pri)
    v_post = v - T*P*v^2/(K*P*v + nv), strictly inside (0, v).
    """
    v_pri = np.asarray(v_pri, dtype=float)
    if np.any(v_pri <= 0):
        raise NonPositiveVarianceError("prior variance must be positive")
    denom = pilot.k * pilot.p * v_pri + noise_var
    resid = y - apply_pilot(pilot, x_pri)
    x_post = x_pri + (v_pri / denom)[None, None, :] * adjoint_pilot(pilot, resid)
    # factored form of v - T*P*v^2/denom: stays positive when T*P*v^2/denom
    # rounds to v itself (near-noiseless square systems)
    v_post = v_pri * ((pilot.k - pilot.t) * pilot.p * v_pri + noise_var) / denom
    return x_post, v_post


def gaussian_ext(post_mean, v_post, pri_mean, v_pri, var_floor: float, var_cap: float):
    """Extrinsic Gaussian message: divide posterior belief by the incoming prior.

    1/v_ext = 1/v_post - 1/v_pri and ext_mean = v_ext*(post/v_post - pri/v_pri)
    with the exact v_ext; only the reported variance is clamped into
    [var_floor, var_cap] (a floored variance must not rescale the mean). An
    uninformative posterior (v_post >= v_pri) caps the variance and bounds the
    mean with it. Returns (mean, var, clamp count, uninformative mask); the
    mask flags entries whose cavity division was ill-defined so the caller can
    skip the update for them.
    """
    v_post = np.asarray(v_post, dtype=float)
    v_pri = np.asarray(v_pri, dtype=float)
    if np.any(v_post <= 0) or np.any(v_pri <= 0):
        raise NonPositiveVarianceError("variances must be positive")
    prec = 1.0 / v_post - 1.0 / v_pri
    slope = post_mean / v_post - pri_mean / v_pri
    safe = np.where(prec > 0, prec, 1.0)
    v_exact = np.where(prec > 0, 1.0 / safe, np.inf)
    clamped = int(np.count_nonzero((v_exact > var_cap) | (v_exact < var_floor)))
    v_ext = np.clip(v_exact, var_floor, var_cap)
    ext_mean = np.where((prec > 0), slope / safe, var_cap * slope)
    return ext_mean, v_ext, clamped, prec <= 0


def activity_update(x_pri: np.ndarray, v_pri: np.ndarray, h_ext: np.ndarray,
                    tau_ext: np.ndarray, lam: float) -> np.ndarray:
    """Posterior activity probabilities, computed entirely in the log domain.

    Per device, the log-likelihood ratio of the active vs inactive hypothesis
    accumulates N*log(v/(v+tau)) + ||x||^2/v - ||x - h||^2/(v+tau) over
    antennas; infinite ratios saturate cleanly to 0/1 via the stable sigmoid.
    """
    if lam >= 1.0:
        return np.ones(x_pri.shape[0])
    if lam <= 0.0:
        return np.zeros(x_pri.shape[0])
    v = np.asarray(v_pri, dtype=float)
    vt = v + np.asarray(tau_ext, dtype=float)
    n = x_pri.shape[1]
    e0 = np.sum(np.abs(x_pri) ** 2, axis=1)            # (K, M)
    e1 = np.sum(np.abs(x_pri - h_ext) ** 2, axis=1)
    logratio = (np.log(lam) - np.log1p(-lam)
                + np.sum(n * (np.log(v) - np.log(vt)) + e0 / v - e1 / vt, axis=1))
    # stable sigmoid
    out = np.empty_like(logratio)
    pos = logratio >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logratio[pos]))
    ez = np.exp(logratio[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def x_combine(x_pri: np.ndarray, v_pri: np.ndarray, h_ext: np.ndarray,
              tau_ext: np.ndarray):
    """Precision-weighted fusion of the module-A prior with the channel extrinsic."""
    v_pri = np.asarray(v_pri, dtype=float)
    tau_ext = np.asarray(tau_ext, dtype=float)
    v_tilde = 1.0 / (1.0 / v_pri + 1.0 / tau_ext)
    x_tilde = v_tilde[None, None, :] * (x_pri / v_pri[None, None, :]
                                        + h_ext / tau_ext[None, None, :])
    return x_tilde, v_tilde


def x_project(lam_post: np.ndarray, x_tilde: np.ndarray, v_tilde: np.ndarray):
    """Moments of the Bernoulli-Gaussian belief, projected to a per-antenna Gaussian.

    The per-element variance lam*(|x~|^2 + v~) - |lam*x~|^2 is computed in the
    equivalent form lam*(1-lam)*|x~|^2 + lam*v~, which is non-negative term by
    term in floating point.
    """
    lam = np.asarray(lam_post, dtype=float)[:, None, None]
    x_post = lam * x_tilde
    v_elem = lam * (1.0 - lam) * np.abs(x_tilde) ** 2 + lam * v_tilde[None, None, :]
    v_post = v_elem.mean(axis=(0, 1))
    return x_post, v_post


def damp(current, previous, gamma: float):
    """Convex combination gamma*current + (1-gamma)*previous."""
    if not (0 < gamma <= 1):
        raise ValueError("damping factor must be in (0, 1]")
    return gamma * current + (1.0 - gamma) * previous


def decide_activity(lam_post: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold is inclusive: alpha_hat = 1 iff lam_post >= threshold."""
    return (np.asarray(lam_post) >= threshold).astype(np.int8)


def _nmse_db(truth, estimate):
    num = np.sum(np.abs(truth - estimate) ** 2)
    den = np.sum(np.abs(truth) ** 2)
    if den == 0:
        return np.nan
    ratio = num / den
    return max(10.0 * np.log10(ratio), -300.0) if ratio > 0 else -300.0


def run(cfg: SystemConfig, eng: EngineConfig, pilot: PilotOperator, y: np.ndarray,
        denoiser, truth: Optional[np.ndarray] = None,
        channel_power: float = 1.0) -> EngineResult:
    """Run the full message-passing loop on one observation.

    ``denoiser`` maps (h_pri (K,N,M), tau_pri (M,)) to an object with
    ``h_post``/``tau_post`` attributes (or such a tuple). ``channel_power`` is
    the mean per-entry second moment of H across devices; the module-A prior
    starts at zero mean with variance lam * channel_power. ``truth`` is the
    effective channel tensor used only for the NMSE trace.
    """
    k, n, m = cfg.k, cfg.n, cfg.m
    if y.shape != (n * cfg.t, m):
        raise ValueError(f"observation must have shape ({n * cfg.t}, {m})")
    v_init = min(max(cfg.lam * channel_power, eng.var_floor), eng.var_cap)
    state = EngineState(a_pri=GaussianMessageSet(
        mean=np.zeros((k, n, m), dtype=complex), var=np.full(m, v_init)))

    trace = IterationTrace()
    h_post = np.zeros((k, n, m), dtype=complex)
    lam_post = np.full(k, cfg.lam)
    x_post_b = state.a_pri.mean
    prev_x_post = None
    converged = False

    for it in range(eng.max_iters):
        t0 = time.perf_counter()
        state.iter_count = it + 1
        v_pri_a_mean = float(np.mean(state.a_pri.var))

        # module A: per-antenna LMMSE + extrinsic (v_post < v_pri structurally,
        # so the cavity division cannot go uninformative here)
        x_post_a, v_post_a = lmmse_update(y, pilot, state.a_pri.mean,
                                          state.a_pri.var, cfg.noise_var)
        ext_mean, ext_var, c_a, _ = gaussian_ext(x_post_a, v_post_a, state.a_pri.mean,
                                                 state.a_pri.var, eng.var_floor,
                                                 eng.var_cap)
        ext_a = GaussianMessageSet(ext_mean, ext_var)
        if state.prev_ext_a is None:
            state.b_pri = ext_a.copy()
        else:
            state.b_pri = GaussianMessageSet(
                damp(ext_a.mean, state.prev_ext_a.mean, eng.damping),
                damp(ext_a.var, state.prev_ext_a.var, eng.damping))
        state.prev_ext_a = ext_a

        # module B: channel denoiser on h_pri = x_pri_B, tau_pri = v_pri_B
        out = denoiser(state.b_pri.mean, state.b_pri.var)
        h_post, tau_post = (out.h_post, out.tau_post) if hasattr(out, "h_post") else out
        tau_post = np.asarray(tau_post, dtype=float)
        if not (np.all(np.isfinite(h_post)) and np.all(np.isfinite(tau_post))):
            raise DivergedError(f"denoiser produced non-finite output at iteration {it}")
        h_ext_mean, tau_ext, c_h, bad_h = gaussian_ext(h_post, tau_post,
                                                       state.b_pri.mean,
                                                       state.b_pri.var,
                                                       eng.var_floor, eng.var_cap)
        if bad_h.any():
            # skip-update: a pooled denoiser variance can exceed one antenna's
            # prior, making that cavity ill-defined; reuse the factor's last
            # valid message (the huge-mean replacement would poison the
            # activity update)
            h_ext_mean = h_ext_mean.copy()
            if state.h_ext is not None:
                h_ext_mean[:, :, bad_h] = state.h_ext.mean[:, :, bad_h]
                tau_ext = np.where(bad_h, state.h_ext.var, tau_ext)
            else:
                h_ext_mean[:, :, bad_h] = h_post[:, :, bad_h]
        state.h_ext = GaussianMessageSet(h_ext_mean, tau_ext)

        # activity denoiser and Bernoulli-Gaussian recombination
        lam_post = activity_update(state.b_pri.mean, state.b_pri.var,
                                   h_ext_mean, tau_ext, cfg.lam)
        x_tilde, v_tilde = x_combine(state.b_pri.mean, state.b_pri.var,
                                     h_ext_mean, tau_ext)
        x_post_b, v_post_b = x_project(lam_post, x_tilde, v_tilde)
        v_post_b = np.clip(v_post_b, eng.var_floor, eng.var_cap)
        extb_mean, extb_var, c_b, bad_b = gaussian_ext(x_post_b, v_post_b,
                                                       state.b_pri.mean,
                                                       state.b_pri.var,
                                                       eng.var_floor, eng.var_cap)
        if bad_b.any():
            extb_mean = extb_mean.copy()
            if state.prev_ext_b is not None:
                extb_mean[:, :, bad_b] = state.prev_ext_b.mean[:, :, bad_b]
                extb_var = np.where(bad_b, state.prev_ext_b.var, extb_var)
            else:
                extb_mean[:, :, bad_b] = x_post_b[:, :, bad_b]
        ext_b = GaussianMessageSet(extb_mean, extb_var)
        if state.prev_ext_b is None:
            state.a_pri = ext_b.copy()
        else:
            state.a_pri = GaussianMessageSet(
                damp(ext_b.mean, state.prev_ext_b.mean, eng.damping),
                damp(ext_b.var, state.prev_ext_b.var, eng.damping))
        state.prev_ext_b = ext_b
        state.b_ext = ext_b

        if not np.all(np.isfinite(x_post_b)):
            raise DivergedError(f"non-finite message at iteration {it}")

        norm_now = np.linalg.norm(x_post_b)
        if prev_x_post is None:
            residual = np.inf
        elif norm_now == 0:
            residual = 0.0 if np.linalg.norm(prev_x_post) == 0 else np.inf
        else:
            residual = np.linalg.norm(x_post_b - prev_x_post) / norm_now
        prev_x_post = x_post_b

        trace.residual.append(float(residual))
        trace.nmse_db.append(float(_nmse_db(truth, x_post_b)) if truth is not None
                             else float("nan"))
        trace.v_pri_mean.append(v_pri_a_mean)
        trace.v_post_mean.append(float(np.mean(v_post_b)))
        trace.tau_pri.append(float(np.mean(state.b_pri.var)))
        trace.clamps.append(c_a + c_h + c_b)
        trace.ms.append((time.perf_counter() - t0) * 1e3)

        if residual < eng.tol:
            converged = True
            break

    state.lam_post = lam_post
    return EngineResult(h_post=h_post, x_post=x_post_b,
                        alpha_hat=decide_activity(lam_post, eng.threshold),
                        lam_post=lam_post, trace=trace,
                        iterations=len(trace), converged=converged)
