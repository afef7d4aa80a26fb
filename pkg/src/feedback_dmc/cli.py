"""Command line entry point: simulate, bench, exponent, verify."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .channel import ChannelError, load_channel, mutual_information
from .codec import ConfigInvalid
from .exponents import capital_psi, exponent_curve
from .harness import bench_csv, bench_runtime, curve_csv, run_trials, verify_oracle

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MISMATCH = 3


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rate(args, dmc) -> float:
    if args.rate is not None:
        return args.rate
    return args.rate_frac * mutual_information(dmc)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channel", default="bsc:0.1", help="bsc:<p> or a JSON channel file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path (default: stdout)")


def _rate_flags(p: argparse.ArgumentParser, default_frac: float) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rate-frac", type=float, default=default_frac, help="rate as a fraction of capacity")
    g.add_argument("--rate", type=float, help="rate in nats per channel use")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="feedback-dmc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo error rate of the tree codec")
    _common(p)
    _rate_flags(p, 0.98)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--parallel", type=int, default=None)
    p.add_argument("--precision-bits", type=int, default=None)

    p = sub.add_parser("bench", help="word-op and wall-time scaling")
    _common(p)
    _rate_flags(p, 0.98)
    p.add_argument("--n-list", default="2000,10000,100000")
    p.add_argument("--trials", type=int, default=1)

    p = sub.add_parser("exponent", help="E_bound, E_sp, E_r table")
    _common(p)
    p.add_argument("--points", type=int, default=50)

    p = sub.add_parser("verify", help="tree codec vs naive arrays")
    _common(p)
    p.add_argument("--sessions", type=int, default=1000)
    p.add_argument("--messages", type=int, default=64)
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--random-shape", help="e.g. 3x4: fresh random channel per session")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INVALID
    try:
        dmc = load_channel(args.channel)
        if args.command == "simulate":
            stats = run_trials(dmc, _rate(args, dmc), args.n, args.trials, args.seed,
                               args.parallel, args.channel, args.precision_bits)
            _emit(stats.to_csv(), args.out)
        elif args.command == "bench":
            n_list = sorted(int(v) for v in args.n_list.split(","))
            rows = bench_runtime(dmc, _rate(args, dmc), n_list, args.trials, args.seed)
            _emit(bench_csv(rows), args.out)
        elif args.command == "exponent":
            c = mutual_information(dmc)
            if c <= 0:
                raise ConfigInvalid("channel has zero capacity")
            psi = capital_psi(dmc)
            curve = exponent_curve(dmc, np.linspace(c / args.points, c, args.points), psi)
            _emit(curve_csv(curve), args.out)
            print(f"C={curve.capacity:.6g}")
            print(f"sigma2={curve.sigma2:.6g}")
            print(f"Psi={curve.psi:.6g}")
            print(f"inf_phi={curve.inf_phi:.6g}")
        elif args.command == "verify":
            shape = None
            if args.random_shape:
                a, b = args.random_shape.lower().split("x")
                shape = (int(a), int(b))
            rep = verify_oracle(dmc, args.sessions, args.messages, args.n, args.seed,
                                random_shape=shape)
            text = rep.summary() + "\n"
            _emit(text, args.out)
            return EXIT_OK if rep.mismatches == 0 else EXIT_MISMATCH
    except (ChannelError, ConfigInvalid, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
