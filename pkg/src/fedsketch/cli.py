"""Command line entry point: ``fedsketch {run,compare,privacy,check-lr}``.

Exit status is 0 on success, 1 on a config, I/O or numeric error (with one
``error:`` line per problem on stderr), 2 on bad command line usage, and 3
when ``check-lr --strict`` finds the step-size condition violated.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import analysis, harness
from .errors import ConfigError


def _cmd_run(args) -> int:
    config = harness.parse_config(args.config)
    result = harness.run_experiment(config, out_dir=args.out)
    for path in result.csv_paths:
        print(path)
    print(result.summary_path)
    if result.summary["warning"]:
        print("warnings: " + ", ".join(result.summary["warnings"]), file=sys.stderr)
    return 0


def _cmd_compare(args) -> int:
    report = harness.compare(args.a, args.b, target_loss=args.target_loss)
    print(report.format())
    return 0


def _cmd_privacy(args) -> int:
    eps = analysis.privacy_epsilon(args.t, args.m, args.l, args.sigma, args.C, args.alpha)
    q = analysis.privacy_term(args.t, args.m, args.l, args.sigma, args.C, args.alpha)
    if eps is None:
        print(f"infeasible: q={q:.6g} exceeds 1/2 - 1/alpha = {0.5 - 1.0 / args.alpha:.6g}")
    else:
        print(f"epsilon={eps:.10g} (q={q:.6g})")
    return 0


def _cmd_check_lr(args) -> int:
    lhs = analysis.stepsize_lhs(args.eta, args.gamma, args.tau, args.L, args.omega, args.k)
    ok = analysis.stepsize_ok(args.eta, args.gamma, args.tau, args.L, args.omega, args.k)
    bound = analysis.max_stable_eta(args.gamma, args.tau, args.L, args.omega, args.k)
    print(f"lhs={lhs:.6g} ok={str(ok).lower()} max_eta={bound:.6g}")
    return 0 if ok or not args.strict else 3


def _positive(kind):
    def convert(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return convert


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsketch", description="Sketched federated learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help=f"output folder (beats ${harness.OUTPUT_DIR_ENV} and output.dir)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="compare two metrics CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--target-loss", type=float, default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("privacy", help="differential-privacy level of a count sketch")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--C", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.set_defaults(func=_cmd_privacy)

    p = sub.add_parser("check-lr", help="check the local/global step-size condition")
    p.add_argument("--eta", type=_positive(float), required=True)
    p.add_argument("--gamma", type=_positive(float), required=True)
    p.add_argument("--tau", type=_positive(int), required=True)
    p.add_argument("--L", type=_positive(float), required=True)
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--k", type=_positive(int), required=True)
    p.add_argument("--strict", action="store_true", help="exit 3 when the condition fails")
    p.set_defaults(func=_cmd_check_lr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
