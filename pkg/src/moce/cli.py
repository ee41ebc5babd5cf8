"""Command-line entry point: ``moce <command> [options]``."""

from __future__ import annotations

import argparse
import sys

from . import experiments
from .config import PRESETS, ConfigError, resolve
from .data import DataError
from .training import DivergenceError


def _shared(p: argparse.ArgumentParser):
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--jobs", type=int)
    g.add_argument("--data", help="CSV path, or 'synthetic'")
    g.add_argument("--test-data", dest="test_data", help="separate CSV used as the test split")
    g.add_argument("--time-col", dest="time_col")
    g.add_argument("--event-col", dest="event_col")
    g.add_argument("--jitter", type=float, help="break tied times by at most eps * min gap")
    g.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)
    g.add_argument("--no-validation", dest="no_validation", action="store_const", const=True)
    g.add_argument("--tie-policy", dest="tie_policy", choices=["strict", "half"])
    g.add_argument("--bootstrap", type=int)
    g.add_argument("--objective", choices=["elbo", "rt"])
    g.add_argument("--optimizer", choices=["adam", "rmsprop"])
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--l2", dest="l2_experts", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--experts", dest="n_experts", type=int)
    g.add_argument("--hidden", type=lambda s: tuple(int(v) for v in s.split(",") if v),
                   help="comma-separated hidden layer sizes (empty = linear gating)")
    g.add_argument("--activation", choices=["relu", "selu", "sigmoid"])
    g.add_argument("--train-frac", dest="train_frac", type=float)
    g.add_argument("--val-frac", dest="val_frac", type=float)
    g.add_argument("--synthetic-n", dest="synthetic_n", type=int)
    g.add_argument("--synthetic-dim", dest="synthetic_dim", type=int)
    g.add_argument("--synthetic-experts", dest="synthetic_experts", type=int)
    g.add_argument("--synthetic-censoring", dest="synthetic_censoring", type=float)
    g.add_argument("--synthetic-seed", dest="synthetic_seed", type=int)


_CONFIG_KEYS = (
    "seed", "out", "jobs", "data", "test_data", "time_col", "event_col", "jitter", "standardize", "no_validation",
    "tie_policy", "bootstrap", "objective", "optimizer", "learning_rate", "epochs", "l2_experts",
    "patience", "n_experts", "hidden", "activation", "train_frac", "val_frac", "synthetic_n",
    "synthetic_dim", "synthetic_experts", "synthetic_censoring", "synthetic_seed", "restarts",
)


def _resolve(args):
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    return resolve(args.preset, args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moce", description="Mixture of Cox experts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and evaluate it on the test split")
    _shared(p)

    p = sub.add_parser("compare-objectives", help="per-epoch concordance curves, ELBO vs RT")
    _shared(p)
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("eval", help="score a saved model on a CSV file")
    _shared(p)
    p.add_argument("--model", required=True)
    p.add_argument("--standardizer", help="feature statistics CSV written by train")

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _shared(p)
    p.add_argument("--n", type=int, default=8, help="subjects in the random instance")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("props", help="check the lower-bound properties on random instances")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, help="fix the number of experts")
    p.add_argument("--out", help="directory for props.csv")

    p = sub.add_parser("gen-data", help="write a synthetic dataset with planted experts")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--experts", type=int, default=2)
    p.add_argument("--censoring", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _print_record(rec: dict):
    for k in sorted(rec):
        print(f"{k} = {rec[k]}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            _print_record(experiments.run_train(_resolve(args)))
        elif args.command == "compare-objectives":
            summary = experiments.run_compare(_resolve(args))
            _print_record(summary)
            if not summary["elbo_test_ge_rt_test"]:
                print("warning: final ELBO test concordance is below RT", file=sys.stderr)
        elif args.command == "eval":
            _print_record(experiments.run_eval(_resolve(args), args.model, args.standardizer))
        elif args.command == "gradcheck":
            return _gradcheck(args)
        elif args.command == "props":
            return _props(args)
        elif args.command == "gen-data":
            ds, sidecar = experiments.run_gen_data(args.n, args.dim, args.experts, args.censoring,
                                                   args.seed, args.out)
            print(f"wrote {ds.n} rows to {args.out} (ground truth in {sidecar})")
    except (ConfigError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    return 0


def _gradcheck(args) -> int:
    import numpy as np

    cfg = _resolve(args)
    rng = np.random.default_rng(experiments._seed(cfg.seed, 3))
    model, ds = experiments.random_instance(rng, args.n, args.dim, cfg.n_experts, cfg.hidden, cfg.activation)
    errors = experiments.gradcheck(model, ds, corrupt=args.corrupt_gradient)
    worst = max(errors.values())
    for k, v in errors.items():
        print(f"{k}: max relative error {v:.3e}")
    ok = worst <= experiments.GRADCHECK_THRESHOLD
    print("PASS" if ok else f"FAIL (threshold {experiments.GRADCHECK_THRESHOLD:g})")
    return 0 if ok else 1


def _props(args) -> int:
    if args.trials < 1:
        print("error: trials must be at least 1", file=sys.stderr)
        return 2
    _, summary = experiments.run_props(args.trials, args.seed, args.k, args.out)
    _print_record(summary)
    return 0 if summary["bounds_ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
