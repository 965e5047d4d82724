"""Command line for training score networks and serving them over the bridge."""

import argparse
import sys

from .data import (DataFormatError, normalize_power, read_channel_dump,
                   synthetic_gaussian)
from .grid import NoiseLevelGrid
from .train import gaussian_checkpoint, load_checkpoint, save_checkpoint, train


def build_parser():
    parser = argparse.ArgumentParser(prog="scoretrain")
    sub = parser.add_subparsers(dest="command", required=True)

    p_tr = sub.add_parser("train", help="train the score network pair")
    src = p_tr.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="channel dump (CHNL format)")
    src.add_argument("--synthetic", type=int, metavar="COUNT",
                     help="use COUNT i.i.d. Gaussian toy samples instead")
    p_tr.add_argument("--n", type=int, default=4)
    p_tr.add_argument("--m", type=int, default=2)
    p_tr.add_argument("--out", required=True)
    p_tr.add_argument("--model", default="linear", choices=["linear", "conv"])
    p_tr.add_argument("--epochs", type=int, default=100)
    p_tr.add_argument("--batch", type=int, default=256)
    p_tr.add_argument("--lr", type=float, default=0.05)
    p_tr.add_argument("--seed", type=int, default=0)
    p_tr.add_argument("--snr-lo", type=int, default=-10)
    p_tr.add_argument("--snr-hi", type=int, default=30)
    p_tr.add_argument("--no-second", action="store_true",
                      help="skip the second-order network")
    p_tr.add_argument("--resume", help="continue from a checkpoint")

    p_sv = sub.add_parser("serve", help="serve a checkpoint over the bridge")
    p_sv.add_argument("--checkpoint", required=True)
    mode = p_sv.add_mutually_exclusive_group(required=True)
    mode.add_argument("--listen", metavar="HOST:PORT")
    mode.add_argument("--stdio", action="store_true")

    p_g = sub.add_parser("gaussian-ckpt",
                         help="write an analytic Gaussian checkpoint")
    p_g.add_argument("--sigma2", type=float, default=1.0)
    p_g.add_argument("--out", required=True)
    return parser


def cmd_train(args) -> int:
    try:
        if args.data:
            samples = normalize_power(read_channel_dump(args.data))
        else:
            samples = normalize_power(
                synthetic_gaussian(args.synthetic, args.n, args.m, seed=args.seed))
    except (OSError, DataFormatError) as exc:
        print(f"cannot load training data: {exc}", file=sys.stderr)
        return 1
    grid = NoiseLevelGrid.from_snr_range(args.snr_lo, args.snr_hi)
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt = train(samples, grid, epochs=args.epochs, batch_size=args.batch,
                 lr=args.lr, seed=args.seed, model_kind=args.model,
                 train_second=not args.no_second, resume=resume)
    save_checkpoint(ckpt, args.out)
    last = ckpt["curve"][-1] if ckpt["curve"] else (0, float("nan"), float("nan"))
    print(f"epoch {last[0]}: loss1={last[1]:.6g} loss2={last[2]:.6g}",
          file=sys.stderr)
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    from . import serve
    if args.stdio:
        serve.serve_stdio(args.checkpoint)
        return 0
    host, _, port = args.listen.rpartition(":")
    serve.serve_tcp(args.checkpoint, host or "127.0.0.1", int(port))
    return 0


def cmd_gaussian(args) -> int:
    save_checkpoint(gaussian_checkpoint(args.sigma2), args.out)
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return cmd_train(args)
    if args.command == "serve":
        return cmd_serve(args)
    if args.command == "gaussian-ckpt":
        return cmd_gaussian(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
