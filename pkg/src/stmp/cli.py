"""Command-line front door.

Subcommands: ``simulate`` runs a (swept) Monte Carlo experiment and writes the
results CSV, ``validate`` checks a config file, ``denoise-test`` evaluates a
denoiser backend standalone on AWGN-corrupted channel samples, and
``bridge-check`` probes a score bridge server. Progress goes to stderr;
machine-readable CSV goes to --out (or stdout). Exit codes: 0 success,
1 config error, 2 runtime error, 3 bridge failure.
"""

import argparse
import os
import sys

import numpy as np

from . import harness
from .bridge import BridgeClient, BridgeError, BridgeScoreModel
from .denoisers import ChannelDenoiser, GaussianMixtureScore, GaussianScore, denoise
from .engine import DivergedError
from .harness import AXIS_ALIASES, ExperimentSpec
from .model import InvalidConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_BRIDGE = 3


def _log(msg):
    print(msg, file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(prog="stmp")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p_sim.add_argument("config")
    p_sim.add_argument("--sweep", action="append", default=[],
                       metavar="AXIS=V1,V2,...",
                       help="sweep axis (snr.db, system.k, system.lambda, system.t); "
                            "last flag wins")
    p_sim.add_argument("--out", help="results CSV path (default: stdout)")
    p_sim.add_argument("--trials", type=int, default=100)
    p_sim.add_argument("--workers", type=int, default=None,
                       help="trial workers (default: STMP_WORKERS or cpu count)")
    p_sim.add_argument("--bridge-addr", help="host:port of a score bridge server")
    p_sim.add_argument("--traces", metavar="DIR",
                       help="write per-trial iteration traces as CSVs here")
    p_sim.add_argument("--no-timing", action="store_true",
                       help="zero the ms columns for bit-reproducible CSVs")

    p_den = sub.add_parser("denoise-test", help="standalone denoiser evaluation")
    p_den.add_argument("--backend", default="gaussian",
                       choices=["gaussian", "gaussian_mixture", "bridge"])
    p_den.add_argument("--addr", help="bridge server address (bridge backend)")
    p_den.add_argument("--sigma2", type=float, default=1.0)
    p_den.add_argument("--snr", default="-10,-5,0,5,10,15,20",
                       help="comma-separated SNR grid in dB")
    p_den.add_argument("--samples", type=int, default=256)
    p_den.add_argument("--n", type=int, default=8)
    p_den.add_argument("--m", type=int, default=4)
    p_den.add_argument("--seed", type=int, default=1)

    p_br = sub.add_parser("bridge-check", help="health-check a bridge server")
    p_br.add_argument("--addr", required=True)
    return parser


def _parse_sweep(flags):
    axis, values = None, ()
    for flag in flags:  # last flag wins
        if "=" not in flag:
            raise InvalidConfigError("--sweep", f"expected AXIS=V1,V2,..., got {flag!r}")
        name, raw = flag.split("=", 1)
        name = name.strip()
        if name not in AXIS_ALIASES:
            raise InvalidConfigError("--sweep", f"unknown sweep axis {name!r}")
        axis = AXIS_ALIASES[name]
        values = tuple(float(v) for v in raw.split(",") if v.strip())
        if not values:
            raise InvalidConfigError("--sweep", "sweep value list is empty")
    return axis, values


def cmd_validate(args) -> int:
    try:
        load_config(args.config)
    except OSError as exc:
        _log(f"cannot read config: {exc}")
        return EXIT_CONFIG
    except InvalidConfigError as exc:
        _log(str(exc))
        return EXIT_CONFIG
    _log(f"{args.config}: ok")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        run_cfg = load_config(args.config)
        axis, values = _parse_sweep(args.sweep)
    except (OSError, InvalidConfigError) as exc:
        _log(str(exc))
        return EXIT_CONFIG
    if run_cfg.engine.denoiser_kind == "bridge" and not args.bridge_addr:
        _log("bridge backend selected but no --bridge-addr given")
        return EXIT_CONFIG

    spec = ExperimentSpec(base=run_cfg, sweep_axis=axis, sweep_values=values,
                          trials=args.trials, bridge_addr=args.bridge_addr,
                          out_path=args.out, emit_traces=args.traces is not None,
                          measure_time=not args.no_timing)
    workers = args.workers if args.workers else harness.default_workers()
    points = spec.points()
    _log(f"simulate: {len(points)} sweep point(s) x {spec.trials} trial(s), "
         f"{workers} worker(s)")
    try:
        rows, failures = harness.run_experiment(spec, workers=workers,
                                                trace_dir=args.traces)
    except BridgeError as exc:
        _log(f"bridge failure: {exc}")
        return EXIT_BRIDGE
    except (harness.ExperimentError, DivergedError, ValueError) as exc:
        _log(f"experiment failed: {exc}")
        return EXIT_RUNTIME
    for pi, ti, err in failures:
        _log(f"trial failed (point {pi}, trial {ti}): {err}")
    csv_text = harness.results_csv(rows)
    if spec.out_path:
        with open(spec.out_path, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        _log(f"wrote {spec.out_path}")
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def denoise_test(backend, snr_grid_db, sigma2=1.0, n=8, m=4, samples=256,
                 seed=1, addr=None):
    """Pure-denoising evaluation: AWGN in, NMSE out, across an SNR grid.

    Returns rows of (snr_db, tau, nmse_db, analytic_db). The analytic column
    is the Gaussian closed form 10*log10(tau/(sigma2+tau)), None otherwise.
    """
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal((samples, n, m))
         + 1j * rng.standard_normal((samples, n, m))) * np.sqrt(sigma2 / 2)
    if backend == "gaussian":
        score = GaussianScore(sigma2)
        normalize = False
    elif backend == "gaussian_mixture":
        score = GaussianMixtureScore([0.5, 0.5], [0.0, 0.0],
                                     [0.5 * sigma2, 1.5 * sigma2])
        normalize = False
    elif backend == "bridge":
        if addr is None:
            raise BridgeError("bridge backend requires --addr")
        score = BridgeScoreModel(BridgeClient.connect_tcp(addr))
        normalize = True
    else:
        raise ValueError(f"unknown backend {backend!r}")
    denoiser = ChannelDenoiser(score, normalize=normalize)

    rows = []
    signal = float(np.sum(np.abs(h) ** 2))
    for snr_db in snr_grid_db:
        tau = sigma2 / 10.0 ** (snr_db / 10.0)
        noisy = h + (rng.standard_normal(h.shape)
                     + 1j * rng.standard_normal(h.shape)) * np.sqrt(tau / 2)
        out = denoiser(noisy, np.full(m, tau))
        ratio = float(np.sum(np.abs(out.h_post - h) ** 2)) / signal
        analytic = (harness.nmse_db(tau / (sigma2 + tau))
                    if backend == "gaussian" else None)
        rows.append({"snr_db": snr_db, "tau": tau,
                     "nmse_db": harness.nmse_db(ratio), "analytic_db": analytic})
    return rows


def cmd_denoise_test(args) -> int:
    snr_grid = [float(v) for v in args.snr.split(",") if v.strip()]
    try:
        rows = denoise_test(args.backend, snr_grid, sigma2=args.sigma2, n=args.n,
                            m=args.m, samples=args.samples, seed=args.seed,
                            addr=args.addr)
    except (BridgeError, OSError) as exc:
        _log(f"bridge failure: {exc}")
        return EXIT_BRIDGE
    except Exception as exc:
        _log(f"denoise-test failed: {exc}")
        return EXIT_RUNTIME
    print(f"{'snr_db':>8} {'tau':>12} {'nmse_db':>10} {'analytic_db':>12}")
    for row in rows:
        analytic = "" if row["analytic_db"] is None else f"{row['analytic_db']:12.2f}"
        print(f"{row['snr_db']:8.1f} {row['tau']:12.5g} {row['nmse_db']:10.2f} {analytic}")
    return EXIT_OK


def cmd_bridge_check(args) -> int:
    probe = np.zeros((1, 2, 2), dtype=complex)
    try:
        with BridgeClient.connect_tcp(args.addr) as client:
            s1, s2 = client.score_both(probe, 1.0)
        if s1.shape != probe.shape or s2.shape != probe.shape:
            raise BridgeError(f"bad response shapes {s1.shape}, {s2.shape}")
    except (BridgeError, OSError) as exc:
        _log(f"bridge check failed: {exc}")
        return EXIT_BRIDGE
    _log(f"bridge at {args.addr}: ok")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args)
    if args.command == "simulate":
        return cmd_simulate(args)
    if args.command == "denoise-test":
        return cmd_denoise_test(args)
    if args.command == "bridge-check":
        return cmd_bridge_check(args)
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
