"""Command-line entry point.

Subcommands print one JSON document on stdout.  Failures exit nonzero with
a single JSON line ``{"error": ..., "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import diagnostics as dg
from .core import ChainTrace
from .experiments import ExperimentSpec, match_budget, run_experiment, run_limits


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def cmd_run(args) -> dict:
    spec = ExperimentSpec.from_ini(args.spec)
    paths = run_experiment(spec)
    return {"experiment": spec.name, "outputs": {k: str(v) for k, v in paths.items()}}


def cmd_limits(args) -> dict:
    spec = ExperimentSpec.from_ini(args.spec)
    paths = run_limits(spec)
    rows = {k: float(v) for k, v in _first_row(paths["ks"]).items()}
    return {"experiment": spec.name, "outputs": {"ks": str(paths["ks"])}, "ks": rows}


def _first_row(path) -> dict:
    from .experiments import read_rows
    return read_rows(path)[0]


def cmd_ess(args) -> dict:
    trace = ChainTrace.from_csv(args.trace, burn_in=args.burn_in)
    est = dg.ess_per_switch_iteration(trace)
    return {"ess": est.ess, "iat": est.value, "raw_iat": _clean(est.raw),
            "switch_proposals": int(len(trace.switch_k_path())),
            "acceptance_rate": _clean(trace.acceptance_rate()),
            "degenerate": est.degenerate, "antithetic": bool(est.antithetic),
            "period": est.periodic}


def cmd_tv(args) -> dict:
    from .targets.changepoint import read_reference_pmf
    trace = ChainTrace.from_csv(args.trace, burn_in=args.burn_in)
    ref = read_reference_pmf(args.reference)
    ks = trace.k[trace.post_burn_in()]
    if ks.max() >= len(ref) or ks.min() < 0:
        raise ValueError(f"trace visits k outside the reference support 0..{len(ref) - 1}")
    pmf = np.bincount(ks, minlength=len(ref)) / len(ks)
    return {"tv": dg.tv_distance(pmf, ref), "iterations": int(len(ks))}


def cmd_budget(args) -> dict:
    total, tau = match_budget(args.I, args.tau, args.T)
    return {"vanilla_iterations": total, "vanilla_tau": tau}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nrjump", description="Lifted and reversible trans-dimensional samplers.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment spec file")
    r.add_argument("spec")
    r.set_defaults(func=cmd_run)
    lm = sub.add_parser("limits", help="compare rescaled ideal chains with their limits")
    lm.add_argument("spec")
    lm.set_defaults(func=cmd_limits)
    e = sub.add_parser("ess", help="ESS per switch iteration of a trace CSV")
    e.add_argument("trace")
    e.add_argument("--burn-in", type=int, default=0)
    e.set_defaults(func=cmd_ess)
    t = sub.add_parser("tv", help="total variation of a trace's model PMF to a reference")
    t.add_argument("trace")
    t.add_argument("reference")
    t.add_argument("--burn-in", type=int, default=0)
    t.set_defaults(func=cmd_tv)
    b = sub.add_parser("budget", help="vanilla run length matching a bridge sampler budget")
    b.add_argument("--I", type=float, required=True)
    b.add_argument("--tau", type=float, required=True)
    b.add_argument("--T", type=float, required=True)
    b.set_defaults(func=cmd_budget)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        out = args.func(args)
    except Exception as exc:  # every failure becomes one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
