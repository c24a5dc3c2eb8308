"""Command line entry point: ``python3 -m sleboundary <task> [flags]``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import TASKS, ConfigError, RunConfig, run
from .measure import IntervalSpec


def _eps_list(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sleboundary", description=__doc__)
    sub = ap.add_subparsers(dest="task", required=True)
    for task in TASKS:
        sp = sub.add_parser(task)
        sp.add_argument("--config", help="JSON run configuration; flags override its fields")
        sp.add_argument("--kappa", type=float)
        sp.add_argument("--paths", type=int, dest="n_paths")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", dest="output_dir")
        sp.add_argument("--eps", type=_eps_list, dest="eps_ladder", help="comma separated, e.g. 0.2,0.1,0.05")
        sp.add_argument("--interval", action="append", dest="intervals", metavar="x1:x2",
                        help="repeatable; default 1:2")
        sp.add_argument("--t-max", type=float, dest="t_max")
        sp.add_argument("--dt-scale", type=float, dest="dt_scale")
        sp.add_argument("--xs", dest="xs", metavar="min:max:count", help="point grid")
        sp.add_argument("--obs", type=_eps_list, dest="obs_times", help="comma separated observation times")
        sp.add_argument("--workers", type=int)
        if task == "validate":
            sp.add_argument("--scale", type=float, dest="validate_scale", help="fraction of the stated path counts")
            sp.add_argument("--only", dest="validate_ids", type=lambda s: tuple(v for v in s.split(",") if v),
                            help="comma separated criterion numbers")
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {"tasks": (args.task,)}
    for key in ("kappa", "n_paths", "seed", "output_dir", "eps_ladder", "t_max", "dt_scale", "obs_times",
                "workers", "validate_scale", "validate_ids"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if args.intervals:
        ivs = [IntervalSpec.parse(s) for s in args.intervals]
        over["intervals"] = tuple((iv.x1, iv.x2) for iv in ivs)
    if args.xs:
        lo, hi, n = args.xs.split(":")
        over.update(xs_min=float(lo), xs_max=float(hi), xs_count=int(n))
    return replace(cfg, **over)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    res = run(cfg, echo=lambda line: print(line, flush=True))
    for f in res.files:
        print(f"wrote {f}")
    if res.reports:
        n_fail = sum(not r.verdict for r in res.reports)
        print(f"{len(res.reports) - n_fail}/{len(res.reports)} checks passed")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
