"""``gcnslim`` command line: prepare, train, evaluate, ablate, gradcheck.

Exit codes: 0 success, 1 error, 2 gradient check failure.  The thread count
of the numeric libraries can be capped with ``GCNSLIM_NUM_THREADS``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .config import ConfigError, RunConfig
from .pipeline import cmd_ablate, cmd_evaluate, cmd_gradcheck, cmd_prepare, cmd_train

log = logging.getLogger("gcnslim")

EXIT_OK, EXIT_ERROR, EXIT_GRADCHECK = 0, 1, 2


def _limit_threads():
    n = os.environ.get("GCNSLIM_NUM_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl is not installed; GCNSLIM_NUM_THREADS ignored")
        return None
    return threadpool_limits(int(n))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcnslim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load, filter, remap and split a dataset")
    _common(p)

    p = sub.add_parser("train", help="fit a model and write checkpoint, curves and metrics")
    _common(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--phase", choices=("valid", "test"), default="test")
    p.add_argument("--per-user", action="store_true")

    p = sub.add_parser("ablate", help="train a list of variants over shared seeds")
    _common(p)
    p.add_argument("--variants", required=True,
                   help="comma/space separated, e.g. 'GCNSLIM GCNSLIM+0-LR layers alpha'")
    p.add_argument("--seeds", help="comma separated seeds (overrides config)")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--linear-tolerance", type=float, default=None,
                   help="stricter bound applied to variants without LeakyReLU")
    p.add_argument("--only", help="substring filter on variant labels")
    p.add_argument("--out", type=Path)
    return parser


def _run_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = str(args.out)
    if args.deterministic is not None:
        overrides["deterministic"] = str(args.deterministic)
    if getattr(args, "seeds", None):
        overrides["seeds"] = args.seeds
    return RunConfig.load(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = _limit_threads()
    try:
        if args.command == "gradcheck":
            return _gradcheck(args)
        cfg = _run_config(args)
        if args.command == "prepare":
            out = cmd_prepare(cfg)
            print(f"wrote {out}")
        elif args.command == "train":
            res = cmd_train(cfg)
            print(f"best epoch {res.report.best_epoch}: test recall@10 "
                  f"{res.test.recall_at_n:.4f} ndcg@10 {res.test.ndcg_at_n:.4f}")
        elif args.command == "evaluate":
            out = args.out if args.out is not None else Path(cfg.out)
            rep = cmd_evaluate(args.checkpoint, cfg, args.phase, out, args.per_user)
            print(f"{args.phase}: recall@10 {rep.recall_at_n:.4f} ndcg@10 {rep.ndcg_at_n:.4f} "
                  f"over {rep.users_evaluated} users")
        elif args.command == "ablate":
            tokens = [t for t in args.variants.replace(",", " ").split() if t]
            rows = cmd_ablate(cfg, tokens)
            for r in rows:
                metric = (f"{r['test_ndcg10']:.4f}" if r["status"] == "ok" else r["error"])
                print(f"{r['variant']:28s} seed={r['seed']:<6} ndcg@10={metric}")
        return EXIT_OK
    except (ConfigError, ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        if limits is not None:
            limits.unregister()


def _gradcheck(args) -> int:
    rows = cmd_gradcheck(args.epsilon, args.seed, args.tolerance, args.linear_tolerance,
                         args.only)
    if not rows:
        print("error: no variant matched", file=sys.stderr)
        return EXIT_ERROR
    for r in rows:
        flag = "ok  " if r["passed"] else "FAIL"
        print(f"{flag} {r['variant']:40s} max rel error {r['max_rel_error']:.3e} "
              f"(tol {r['tolerance']:.0e})")
    worst = max(r["max_rel_error"] for r in rows)
    print(f"max relative error {worst:.3e} at epsilon {args.epsilon:g}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        io.write_json(args.out / "gradcheck.json", {"epsilon": args.epsilon, "seed": args.seed,
                                                    "max_rel_error": worst, "rows": rows})
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_GRADCHECK


if __name__ == "__main__":
    sys.exit(main())
