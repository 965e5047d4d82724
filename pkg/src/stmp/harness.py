"""Monte Carlo experiment runner: trials, metrics, sweeps, CSV plot data.

Trial seeds derive from (master seed, sweep point index, trial index) through a
splitmix64 finalizer chain, so adding trials or reordering execution never
perturbs existing results. Trials are embarrassingly parallel; aggregation is
a deterministic reduction in trial order.
"""

import concurrent.futures
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import channels, engine, pilots
from .denoisers import ChannelDenoiser, GaussianMixtureScore, GaussianScore
from .model import EngineConfig, RunConfig, validate, with_overrides

SWEEP_AXES = ("snr_db", "k", "lam", "t")

# CLI/config spellings of the sweep axes
AXIS_ALIASES = {
    "snr.db": "snr_db", "snr_db": "snr_db",
    "system.k": "k", "k": "k",
    "system.lambda": "lam", "lambda": "lam", "lam": "lam",
    "system.t": "t", "t": "t",
}

RESULTS_HEADER = ("axis,value,trials,nmse_db_mean,nmse_db_stderr,"
                  "pe_mean,pe_stderr,iters_mean,ms_mean")


class NoActiveDevicesError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    base: RunConfig
    sweep_axis: Optional[str] = None     # one of SWEEP_AXES, or None
    sweep_values: tuple = ()
    trials: int = 100
    bridge_addr: Optional[str] = None    # required for the bridge backend
    out_path: Optional[str] = None       # results CSV destination (None: caller's choice)
    emit_traces: bool = False
    measure_time: bool = True            # False zeroes ms columns for reproducible CSVs

    def points(self):
        if self.sweep_axis is None:
            return [None]
        return list(self.sweep_values)


@dataclass
class TrialResult:
    nmse: float          # linear ratio over effective channels
    missed: int
    false_alarms: int
    iterations: int
    wall_ms: float
    trace: Optional[engine.IterationTrace] = None


def splitmix64(x: int) -> int:
    """splitmix64 finalizer (standard constants, frozen for seed stability)."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def trial_seed(master_seed: int, point_index: int, trial_index: int) -> int:
    s = splitmix64(master_seed)
    s = splitmix64(s ^ point_index)
    return splitmix64(s ^ trial_index)


def nmse(truth_x: np.ndarray, estimate: np.ndarray) -> float:
    """Error energy over the effective channels, relative to their total energy."""
    den = float(np.sum(np.abs(truth_x) ** 2))
    if den == 0:
        raise NoActiveDevicesError("no active device: NMSE undefined")
    return float(np.sum(np.abs(truth_x - estimate) ** 2)) / den


def nmse_db(ratio: float) -> float:
    """dB with a -300 sentinel for (numerically) perfect estimates."""
    if ratio <= 1e-30:
        return -300.0
    return max(10.0 * np.log10(ratio), -300.0)


def detection_error(alpha: np.ndarray, alpha_hat: np.ndarray):
    alpha = np.asarray(alpha).astype(bool)
    alpha_hat = np.asarray(alpha_hat).astype(bool)
    if alpha.shape != alpha_hat.shape:
        raise ValueError("activity vectors must have equal length")
    missed = int(np.count_nonzero(alpha & ~alpha_hat))
    false_alarms = int(np.count_nonzero(~alpha & alpha_hat))
    return missed, false_alarms, (missed + false_alarms) / alpha.size


def make_denoiser(kind: str, sigma2: float, eng: EngineConfig,
                  bridge_addr: Optional[str] = None):
    """Build the channel-denoiser backend for a trial.

    gaussian: analytic CN(0, sigma2) prior (the Bernoulli-Gaussian baseline).
    gaussian_mixture: diagnostic two-component zero-mean mixture around sigma2.
    bridge: external score server; inputs are power-normalized for it.
    """
    if kind == "gaussian":
        return ChannelDenoiser(GaussianScore(sigma2), normalize=False,
                               var_floor=eng.var_floor)
    if kind == "gaussian_mixture":
        score = GaussianMixtureScore([0.5, 0.5], [0.0, 0.0],
                                     [0.5 * sigma2, 1.5 * sigma2])
        return ChannelDenoiser(score, normalize=False, var_floor=eng.var_floor)
    if kind == "bridge":
        from .bridge import BridgeClient, BridgeError, BridgeScoreModel
        if bridge_addr is None:
            raise ExperimentError("bridge backend requires an address")
        try:
            client = BridgeClient.connect_tcp(bridge_addr)
        except OSError as exc:
            raise BridgeError(f"cannot reach bridge at {bridge_addr}: {exc}") from exc
        return ChannelDenoiser(BridgeScoreModel(client), normalize=True,
                               var_floor=eng.var_floor)
    raise ExperimentError(f"unknown denoiser kind {kind!r}")


def _point_config(spec: ExperimentSpec, value) -> RunConfig:
    if spec.sweep_axis is None or value is None:
        return spec.base
    return with_overrides(spec.base, **{spec.sweep_axis: value})


def run_trial(spec: ExperimentSpec, point_index: int, trial_index: int,
              denoiser=None) -> TrialResult:
    """One deterministic trial: sample a scene, observe, run the engine, score it."""
    value = spec.points()[point_index]
    run_cfg = _point_config(spec, value)
    sys_cfg, eng_cfg, chan = run_cfg.system, run_cfg.engine, run_cfg.channel
    validate(sys_cfg, eng_cfg, chan)

    rng = np.random.default_rng(trial_seed(sys_cfg.seed, point_index, trial_index))
    # frozen draw order: pilot, realization, observation noise
    pilot = pilots.build_pilot(sys_cfg, rng)
    real = channels.sample_realization(sys_cfg, chan, rng)

    noise_var = sys_cfg.noise_var
    if run_cfg.snr_db is not None:
        noise_var = sys_cfg.p * float(np.mean(real.gains)) / 10.0 ** (run_cfg.snr_db / 10.0)
        sys_cfg = replace(sys_cfg, noise_var=noise_var)
    y = channels.observe(real, pilot, noise_var, rng)

    entry_power = channels.per_entry_power(chan, real.gains, sys_cfg.n, sys_cfg.m)
    sigma2 = float(np.mean(entry_power))
    if denoiser is None:
        denoiser = make_denoiser(eng_cfg.denoiser_kind, sigma2, eng_cfg, spec.bridge_addr)

    truth_x = real.effective()
    t0 = _now_ms()
    result = engine.run(sys_cfg, eng_cfg, pilot, y, denoiser,
                        truth=truth_x, channel_power=sigma2)
    wall_ms = _now_ms() - t0

    ratio = nmse(truth_x, result.x_post)
    missed, false_alarms, _ = detection_error(real.alpha, result.alpha_hat)
    return TrialResult(nmse=ratio, missed=missed, false_alarms=false_alarms,
                       iterations=result.iterations, wall_ms=wall_ms,
                       trace=result.trace if spec.emit_traces else None)


def _now_ms():
    import time
    return time.perf_counter() * 1e3


def _trial_job(args):
    from .bridge import BridgeError
    spec, point_index, trial_index = args
    try:
        return point_index, trial_index, run_trial(spec, point_index, trial_index), None
    except BridgeError:
        raise  # infrastructure failure, not a statistical one: abort the run
    except Exception as exc:  # recorded and excluded by the aggregator
        return point_index, trial_index, None, f"{type(exc).__name__}: {exc}"


def run_experiment(spec: ExperimentSpec, workers: int = 1, trace_dir=None):
    """Run every (point, trial) pair and aggregate per sweep point.

    Returns (rows, failures). Failed trials are recorded and excluded; more
    than 10% failures aborts the experiment. Aggregates are independent of the
    execution order and of the worker count. With trace_dir set (and
    emit_traces on), per-trial iteration traces land there as CSV files.
    """
    points = spec.points()
    if not points:
        raise ExperimentError("sweep value list is empty")
    if spec.trials < 1:
        raise ExperimentError("need at least one trial per point")
    jobs = [(spec, pi, ti) for pi in range(len(points)) for ti in range(spec.trials)]
    total = len(jobs)
    max_failures = total // 10

    outcomes = {}
    failures = []
    if workers <= 1:
        stream = map(_trial_job, jobs)
    else:
        pool = concurrent.futures.ProcessPoolExecutor(max_workers=workers)
        stream = pool.map(_trial_job, jobs, chunksize=max(1, total // (4 * workers)))
    try:
        for pi, ti, res, err in stream:
            if err is None:
                outcomes[(pi, ti)] = res
            else:
                failures.append((pi, ti, err))
                if len(failures) > max_failures:
                    raise ExperimentError(
                        f"{len(failures)}/{total} trials failed (>10%); last: {err}")
    finally:
        if workers > 1:
            pool.shutdown(cancel_futures=True)

    if trace_dir is not None and spec.emit_traces:
        os.makedirs(trace_dir, exist_ok=True)
        for (pi, ti), res in sorted(outcomes.items()):
            if res.trace is not None:
                path = os.path.join(trace_dir, f"trace_p{pi}_t{ti}.csv")
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write(res.trace.to_csv())

    rows = []
    k_for_pe = None
    for pi, value in enumerate(points):
        cfg = _point_config(spec, value).system
        k_for_pe = cfg.k
        trials = [outcomes[(pi, ti)] for ti in range(spec.trials) if (pi, ti) in outcomes]
        if not trials:
            raise ExperimentError(f"all trials failed at sweep point {value!r}")
        nmse_vals = np.array([nmse_db(t.nmse) for t in trials])
        pe_vals = np.array([(t.missed + t.false_alarms) / k_for_pe for t in trials])
        iters = np.array([t.iterations for t in trials], dtype=float)
        ms = np.array([t.wall_ms for t in trials]) if spec.measure_time else np.zeros(len(trials))
        rows.append({
            "axis": spec.sweep_axis or "none",
            "value": value if value is not None else "",
            "trials": len(trials),
            "nmse_db_mean": nmse_vals.mean(),
            "nmse_db_stderr": _stderr(nmse_vals),
            "pe_mean": pe_vals.mean(),
            "pe_stderr": _stderr(pe_vals),
            "iters_mean": iters.mean(),
            "ms_mean": ms.mean(),
        })
    return rows, failures


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def results_csv(rows) -> str:
    lines = [RESULTS_HEADER]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in RESULTS_HEADER.split(",")))
    return "\n".join(lines) + "\n"


def write_results(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(results_csv(rows))


def default_workers() -> int:
    env = os.environ.get("STMP_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
