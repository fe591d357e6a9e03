"""``imcond`` command line: plausibility curves, regions, coverage tables,
uniformity diagnostics and the variance-components demonstration.

Exit status is 0 on success, 2 on usage errors and 1 on numeric failures.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys

import numpy as np

from imcond import __version__
from imcond.engine import plausibility_interval, plausibility_region
from imcond.errors import ConfigurationError, ImcondError, ParameterDomainError
from imcond.models.bvn import BVNModel, bvn_reduce
from imcond.models.gamma2 import Gamma2Model, gamma2_stats
from imcond.models.io import load_data
from imcond.models.nile import NileModel
from imcond.models.normal_mean import normalmean_pl
from imcond.models.student_t import StudentTModel
from imcond.models.varcomp import MCMCSettings, VCDesign, vc_cpl_grid, vc_design_from_groups, vc_simulate
from imcond.numerics import RngStream
from imcond.validate import ExperimentSpec, qq_uniformity, run_coverage

__all__ = ["main", "build_parser", "parse_grid"]


class UsageError(Exception):
    pass


def parse_grid(spec: str) -> np.ndarray:
    """``"lo:hi:count"`` to ``count`` evenly spaced points (``count >= 2``)."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must look like lo:hi:count, got {spec!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"grid must look like lo:hi:count, got {spec!r}") from None
    if count < 2 or not hi > lo:
        raise UsageError(f"grid needs count >= 2 and hi > lo, got {spec!r}")
    return np.linspace(lo, hi, count)


def _floats(text: str, name: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"--{name} must be a comma-separated list of numbers") from None


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str, seed, header: tuple[str, ...], rows) -> None:
    lines = [f"# imcond {__version__} seed={seed}", ",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    text = "\n".join(lines) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# commands


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for this command")


def cmd_plaus(args) -> str:
    _require(args, "data", "grid")
    grid = parse_grid(args.grid)
    data = load_data(args.model, args.data)
    if args.model == "t":
        _require(args, "nu")
        vals = StudentTModel(args.nu).cpl_many(data, grid)
    elif args.model == "nile":
        vals = NileModel().cpl_many(data, grid)
    elif args.model == "bvn":
        x1, x2, n = bvn_reduce(data)
        vals = BVNModel(n).cpl_many((x1, x2), grid)
    elif args.model == "normal-mean":
        y = (data[0] + data[1], data[0] - data[1])
        vals = normalmean_pl(y, grid, "conditional_1d" if args.variant == "conditional" else "baseline_2d")
    else:
        raise UsageError(f"plaus does not support model {args.model!r}")
    write_csv(args.out, args.seed, ("theta", "cpl"), zip(grid, vals))
    return f"wrote {grid.size} rows, max cpl {float(np.max(vals)):.6g}"


def cmd_region(args) -> str:
    _require(args, "data", "grid1", "grid2")
    g1, g2 = parse_grid(args.grid1), parse_grid(args.grid2)
    A, B = np.meshgrid(g1, g2, indexing="ij")
    pts = np.column_stack([A.ravel(), B.ravel()])
    stream = RngStream(args.seed)
    if args.model == "gamma2":
        x = load_data("gamma2", args.data)
        t = gamma2_stats(x)
        model = Gamma2Model(x.size, stream, args.mc_draws)
        region = plausibility_region(model, "square_2d", t, args.alpha, pts)
        vals, inside = region.cpl, region.inside
    elif args.model == "vc":
        groups, y = load_data("vc", args.data)
        design, y = vc_design_from_groups(groups, y)
        vals = vc_cpl_grid(y, design, np.exp(pts), MCMCSettings(args.steps, args.burn_in), stream)
        inside = vals > args.alpha
    else:
        raise UsageError(f"region does not support model {args.model!r}")
    write_csv(args.out, args.seed, ("theta1", "theta2", "cpl", "in_region"), zip(pts[:, 0], pts[:, 1], vals, inside))
    return f"wrote {pts.shape[0]} rows, {int(np.sum(inside))} in region"


def cmd_coverage(args) -> str:
    _require(args, "n", "method")
    truth = _floats(args.truth, "truth") if args.truth else ((1.0,) if args.model == "nile" else (0.0,))
    try:
        spec = ExperimentSpec(
            model=args.model,
            n=args.n,
            truth=truth,
            reps=args.reps,
            alpha=args.alpha,
            method=args.method,
            master_seed=args.seed,
            nu=args.nu,
        )
    except ParameterDomainError as exc:
        raise UsageError(str(exc)) from None
    res = run_coverage(spec)
    write_csv(args.out, args.seed, ("coverage", "mean_length", "mc_se"), [(res.coverage, res.mean_length, res.mc_se)])
    return f"coverage {res.coverage:.4f} (se {res.mc_se:.4f}), mean length {res.mean_length:.4f}, failures {res.failures}"


def cmd_qq(args) -> str:
    theta = args.theta if args.theta is not None else (1.0 if args.model == "nile" else 0.0)
    n = args.n if args.n is not None else 2
    if args.model == "t":
        _require(args, "nu")
    res = qq_uniformity(args.model, args.variant, args.reps, RngStream(args.seed), theta=theta, n=n, nu=args.nu)
    p = (np.arange(1, args.reps + 1) - 0.5) / args.reps
    write_csv(args.out, args.seed, ("p", "empirical_quantile"), zip(p, res.values))
    return f"KS {res.ks:.5f} (1% critical {res.critical:.5f}), dominance {res.dominance}"


def cmd_vc_demo(args) -> str:
    sizes = tuple(int(s) for s in _floats(args.sizes, "sizes"))
    theta = _floats(args.theta_true, "theta-true")
    if len(theta) != 2:
        raise UsageError("--theta-true takes two values")
    design = VCDesign(sizes)
    stream = RngStream(args.seed)
    y = vc_simulate(design, theta, stream.child(0).generator())
    ga = np.arange(-20, 20) * 0.2 if args.grid1 is None else parse_grid(args.grid1)
    ge = np.arange(-20, 20) * 0.05 if args.grid2 is None else parse_grid(args.grid2)
    A, E = np.meshgrid(ga, ge, indexing="ij")
    pts = np.column_stack([A.ravel(), E.ravel()])
    vals = vc_cpl_grid(y, design, np.exp(pts), MCMCSettings(args.steps, args.burn_in), stream.child(1))
    inside = vals > args.alpha
    write_csv(args.out, args.seed, ("theta1", "theta2", "cpl", "in_region"), zip(pts[:, 0], pts[:, 1], vals, inside))
    hit = np.flatnonzero((pts[:, 0] == math.log(theta[0])) & (pts[:, 1] == math.log(theta[1])))
    note = f", truth in region: {bool(inside[hit[0]])}" if hit.size else ""
    return f"wrote {pts.shape[0]} rows, {int(inside.sum())} in region{note}"


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


MODELS = ("t", "nile", "bvn", "normal-mean", "gamma2", "vc")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="imcond", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"imcond {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file whose keys mirror the flags; flags win")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="-", help="output CSV path ('-' for stdout)")
        return sp

    sp = common(sub.add_parser("plaus", help="plausibility curve over a theta grid"))
    sp.add_argument("--model", choices=("t", "nile", "bvn", "normal-mean"))
    sp.add_argument("--data")
    sp.add_argument("--grid", help="lo:hi:count")
    sp.add_argument("--nu", type=float)
    sp.add_argument("--variant", choices=("conditional", "baseline"), default="conditional")
    sp.set_defaults(func=cmd_plaus)

    sp = common(sub.add_parser("region", help="two-parameter plausibility region on a grid"))
    sp.add_argument("--model", choices=("gamma2", "vc"))
    sp.add_argument("--data")
    sp.add_argument("--grid1", help="lo:hi:count for the first parameter (log scale for vc)")
    sp.add_argument("--grid2", help="lo:hi:count for the second parameter (log scale for vc)")
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--mc-draws", dest="mc_draws", type=int, default=10_000)
    sp.add_argument("--steps", type=int, default=4000)
    sp.add_argument("--burn-in", dest="burn_in", type=int, default=1000)
    sp.set_defaults(func=cmd_region)

    sp = common(sub.add_parser("coverage", help="Monte Carlo coverage and mean length"))
    sp.add_argument("--model", choices=("t", "nile", "bvn", "normal-mean"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--reps", type=int, default=5000)
    sp.add_argument("--method", choices=("cim", "lcim", "mle", "bayes_flat", "bayes_jeffreys"))
    sp.add_argument("--truth", help="comma-separated truth set, sampled per replication")
    sp.set_defaults(func=cmd_coverage)

    sp = common(sub.add_parser("qq", help="sorted plausibility values at the truth"))
    sp.add_argument("--model", choices=("t", "nile", "bvn", "normal-mean"))
    sp.add_argument("--variant", choices=("conditional", "baseline"), default="conditional")
    sp.add_argument("--reps", type=int, default=5000)
    sp.add_argument("--n", type=int)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--theta", type=float)
    sp.set_defaults(func=cmd_qq)

    sp = common(sub.add_parser("vc-demo", help="simulated variance-components region"))
    sp.add_argument("--sizes", default="4,4,4,8,48")
    sp.add_argument("--theta-true", dest="theta_true", default="1,1")
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--grid1", help="lo:hi:count for log theta_alpha")
    sp.add_argument("--grid2", help="lo:hi:count for log theta_eps")
    sp.add_argument("--steps", type=int, default=4000)
    sp.add_argument("--burn-in", dest="burn_in", type=int, default=1000)
    sp.set_defaults(func=cmd_vc_demo)
    return p


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise UsageError(f"unknown command {command!r}")


_VALUE_FLAGS = ("--grid", "--grid1", "--grid2", "--truth", "--theta-true", "--theta")


def _glue_negative_values(argv):
    # argparse reads "-1:2:5" as an option; attach such values to their flag
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _VALUE_FLAGS and i + 1 < len(argv) and re.match(r"-[\d.]", argv[i + 1]):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def _parse(argv):
    argv = _glue_negative_values(list(argv))
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        raise UsageError("a command is required")
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config!r}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        sp = _subparser(parser, args.command)
        known = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known - {"command"})
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        cfg.pop("command", None)
        sp.set_defaults(**cfg)
        for a in sp._actions:
            if a.dest in cfg:
                a.required = False
        args = parser.parse_args(argv)
    if getattr(args, "model", None) is None and args.command in ("plaus", "region", "coverage", "qq"):
        raise UsageError("--model is required")
    return args


def main(argv=None) -> int:
    try:
        args = _parse(sys.argv[1:] if argv is None else argv)
        msg = args.func(args)
    except UsageError as exc:
        print(f"imcond: error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"imcond: error: {exc}", file=sys.stderr)
        return 2
    except (ImcondError, ArithmeticError, ValueError, OSError) as exc:
        print(f"imcond: failed: {exc}", file=sys.stderr)
        return 1
    print(msg, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
