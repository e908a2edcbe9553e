"""Command-line front end.

Subcommands: evolve, simulate, bruteforce, bounds, verify, cutset. Each
writes CSV (fixed headers, preceded by ``# key=value`` lines echoing the
resolved configuration) or JSON (``{"config": ..., "result": ...}``).
Floats are printed with 12 significant digits.

Exit status: 0 when everything requested passed, 1 when a requested check
failed, 2 for invalid input (the message names the offending option).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction
from typing import Sequence

from . import analysis, exact, montecarlo, tree as treemod
from .channel import ChannelError, channel_from_theta_delta

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2

EVOLVE_HEADER = ["n", "m", "m_plus", "m_minus", "tv", "atoms", "bound", "bound_ok", "moment_error"]
SIMULATE_HEADER = ["quantity", "mean", "stderr", "n_samples", "seed"]
BRUTEFORCE_HEADER = ["value", "prob"]
BOUNDS_HEADER = ["theta0", "arity", "beta", "delta_bar", "ks_product", "classification", "delta_empirical"]
VERIFY_HEADER = ["identity", "residual", "passed"]
CUTSET_HEADER = ["lambda", "weight", "level", "cutset_size", "branching_estimate"]


class ConfigError(Exception):
    """Invalid user input; ``field`` names the option at fault."""

    def __init__(self, field: str, message: str):
        super().__init__(f"--{field.replace('_', '-')}: {message}")
        self.field = field


# ------------------------------------------------------------------ output

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, Fraction)):
        return f"{float(x):.12g}"
    if x is None:
        return ""
    return str(x)


def _round(obj):
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, (float, Fraction)):
        x = float(obj)
        return x if not math.isfinite(x) else float(f"{x:.12g}")
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return _round(obj.item())
    return obj


def _emit(args, header: list[str], rows: list[list], result: dict) -> None:
    config = _resolved_config(args)
    if args.format == "json":
        text = json.dumps(_round({"config": config, "result": result}), indent=1) + "\n"
    else:
        buf = io.StringIO()
        for k, v in config.items():
            buf.write(f"# {k}={_fmt(v)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        text = buf.getvalue()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)


def _resolved_config(args) -> dict:
    skip = {"func", "config", "output", "format"}
    out = {"command": args.command}
    for k, v in sorted(vars(args).items()):
        if k in skip or k == "command":
            continue
        out[k] = str(v) if isinstance(v, Fraction) else v
    return out


# --------------------------------------------------------------- validation

def _number(args, name: str):
    val = getattr(args, name)
    if getattr(args, "exact", False):
        try:
            return Fraction(str(val))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(name, f"not a rational number: {val!r}") from None
    try:
        return eval_simple(str(val))
    except ValueError:
        raise ConfigError(name, f"not a number: {val!r}") from None


def _channel(args):
    theta = _number(args, "theta")
    delta = _number(args, "delta")
    if not abs(theta) < 1:
        raise ConfigError("theta", f"need |theta| < 1, got {args.theta}")
    try:
        return channel_from_theta_delta(theta, delta)
    except ChannelError as e:
        raise ConfigError("delta", f"(theta={args.theta}, delta={args.delta}) is not a valid channel: {e}") from None


def _need(args, name: str, ok: bool, what: str):
    if not ok:
        raise ConfigError(name, f"{what}, got {getattr(args, name)!r}")


def _tree(args):
    """Tree from --tree, or the complete tree from --arity/--depth/--theta/--delta."""
    if getattr(args, "tree", None):
        try:
            return treemod.read_tree(args.tree, exact=getattr(args, "exact", False))
        except OSError as e:
            raise ConfigError("tree", f"cannot read: {e}") from None
        except (treemod.TreeError, ChannelError, ValueError) as e:
            raise ConfigError("tree", str(e)) from None
    if args.delta is None:
        args.delta = "0"
    for name in ("arity", "depth", "theta"):
        if getattr(args, name) is None:
            raise ConfigError(name, "required unless --tree is given")
    _need(args, "arity", args.arity >= 1, "must be >= 1")
    _need(args, "depth", args.depth >= 0, "must be >= 0")
    ch = _channel(args)
    try:
        return treemod.build_regular_tree(args.arity, args.depth, ch)
    except treemod.TreeError as e:
        raise ConfigError("depth", str(e)) from None


# ------------------------------------------------------------- subcommands

def run_evolve(args) -> int:
    _need(args, "arity", args.arity >= 1, "must be >= 1")
    _need(args, "depth", args.depth >= 0, "must be >= 0")
    _need(args, "bin_width", args.bin_width >= 0, "must be >= 0")
    _need(args, "max_atoms", args.max_atoms >= 2, "must be >= 2")
    ch = _channel(args)
    binning = None if args.no_binning else exact.BinningPolicy(bin_width=args.bin_width, max_atoms=args.max_atoms)
    try:
        dists = exact.evolve(args.arity, ch, args.depth, binning=binning, max_atoms=args.max_atoms)
    except exact.AtomExplosionError as e:
        raise ConfigError("no_binning", str(e)) from None
    rows, records = [], []
    all_ok = True
    prev = None
    for n, d in enumerate(dists):
        mt = analysis.moments(d)
        m = float(mt.m)
        bound, ok = None, None
        if prev is not None:
            bound = analysis.symmetric_recursion_bound(min(max(prev, 0.0), 1.0), args.arity, float(ch.theta))
            ok = m <= bound + 1e-10
            all_ok &= ok
        rows.append([n, m, float(mt.m_plus), float(mt.m_minus), float(exact.tv_distance(d)),
                     d.n_atoms, bound, ok, d.moment_error])
        records.append(dict(zip(EVOLVE_HEADER, rows[-1])))
        prev = m
    _emit(args, EVOLVE_HEADER, rows, {"channel": ch.as_float().to_record(), "rows": records})
    return EXIT_CHECK_FAILED if (args.check and not all_ok) else EXIT_OK


def run_simulate(args) -> int:
    _need(args, "samples", args.samples >= 2, "must be >= 2")
    _need(args, "seed", args.seed >= 0, "must be >= 0")
    tr = _tree(args)
    est = montecarlo.estimate_moments(tr, args.samples, args.seed)
    absm = montecarlo.estimate_abs_mean(tr, args.samples, args.seed)
    tv = montecarlo.estimate_tv(tr, args.samples, args.seed)
    ests = [est.m, est.m_plus, est.m_minus, absm, tv]
    rows = [[e.quantity, e.mean, e.stderr, e.n_samples, e.seed] for e in ests]
    result = est.to_json_dict()
    result["abs_mean"] = absm.to_json_dict()
    result["tv"] = tv.to_json_dict()
    _emit(args, SIMULATE_HEADER, rows, result)
    return EXIT_OK


def run_bruteforce(args) -> int:
    _need(args, "max_leaves", 0 <= args.max_leaves <= 40, "must lie in [0, 40]")
    tr = _tree(args)
    try:
        dist = exact.brute_force_distribution(tr, max_leaves=args.max_leaves)
    except exact.OracleCapError as e:
        raise ConfigError("max_leaves", str(e)) from None
    rows = [[float(v), float(p)] for v, p in zip(dist.values, dist.probs)]
    result = dist.to_json_dict()
    result["tv"] = float(exact.tv_distance(dist))
    _emit(args, BRUTEFORCE_HEADER, rows, result)
    return EXIT_OK


def _float_list(text: str, field: str) -> list[float]:
    try:
        return [float(eval_simple(tok)) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(field, f"expected comma-separated numbers, got {text!r}") from None


def eval_simple(tok: str) -> float:
    """Parse a number, allowing the forms ``1/sqrt(d)`` and ``a/b``."""
    tok = tok.strip()
    if tok.startswith("1/sqrt(") and tok.endswith(")"):
        return 1.0 / math.sqrt(float(tok[7:-1]))
    if "/" in tok:
        a, b = tok.split("/", 1)
        return float(a) / float(b)
    return float(tok)


def run_bounds(args) -> int:
    points: list[tuple[float, int | None]] = []
    if args.theta0:
        for t in _float_list(args.theta0, "theta0"):
            points.append((t, args.arity))
    if args.grid:
        parts = args.grid.split(":")
        if len(parts) != 3:
            raise ConfigError("grid", f"expected start:stop:count, got {args.grid!r}")
        try:
            lo, hi, cnt = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError("grid", f"expected start:stop:count, got {args.grid!r}") from None
        _need(args, "grid", cnt >= 1, "count must be >= 1")
        step = (hi - lo) / (cnt - 1) if cnt > 1 else 0.0
        points.extend((lo + i * step, args.arity) for i in range(cnt))
    if args.arities:
        try:
            ds = [int(x) for x in args.arities.split(",") if x.strip()]
        except ValueError:
            raise ConfigError("arities", f"expected comma-separated integers, got {args.arities!r}") from None
        for d in ds:
            _need(args, "arities", d >= 1, "every arity must be >= 1")
            points.append((1.0 / math.sqrt(d), d))
    if not points:
        raise ConfigError("theta0", "give --theta0, --grid or --arities")
    rows, records = [], []
    for t, d in points:
        if not 0 <= t < 1:
            raise ConfigError("theta0", f"every theta0 must lie in [0, 1), got {t!r}")
        rep = analysis.delta0_bound(t, arity=d)
        emp = analysis.empirical_delta0_search(t) if args.empirical else None
        rows.append([rep.theta0, d, rep.beta, rep.delta_bar, rep.ks_product, rep.classification, emp])
        records.append(dict(zip(BOUNDS_HEADER, rows[-1])))
    _emit(args, BOUNDS_HEADER, rows, {"rows": records})
    return EXIT_OK


def run_verify(args) -> int:
    _need(args, "tol", args.tol > 0, "must be > 0")
    tr = _tree(args)
    try:
        rep = analysis.verify_identities(tr, tol=args.tol, max_leaves=args.max_leaves)
    except ValueError as e:
        raise ConfigError("max_leaves", str(e)) from None
    rows = [[k, v, v <= args.tol] for k, v in rep.residuals.items()]
    _emit(args, VERIFY_HEADER, rows, rep.to_json_dict())
    return EXIT_OK if rep.passed else EXIT_CHECK_FAILED


def run_cutset(args) -> int:
    _need(args, "lam", args.lam > 0, "must be > 0")
    _need(args, "tol", args.tol > 0, "must be > 0")
    if args.tree is None and args.arity is not None and args.depth is not None and args.theta is not None \
            and args.arity ** args.depth > treemod.MAX_VERTICES:
        # too big to build explicitly: the complete tree collapses level by level
        theta = float(_number(args, "theta"))
        weight, level = treemod.min_cutset_weight_regular(args.arity, theta, args.depth, args.lam)
        size = args.arity ** level
        br = treemod.branching_number_estimate(args.arity, theta, args.depth, args.tol) \
            if args.branching else None
        result = {"lambda": args.lam, "weight": weight, "level": level, "cutset_size": size, "cutset": None,
                  "branching_estimate": br}
    else:
        tr = _tree(args)
        weight, cs = treemod.min_cutset_weight(tr, args.lam)
        levels = sorted({int(tr.depth[v]) for v in cs.vertices})
        level = levels[0] if len(levels) == 1 else None
        br = None
        if args.branching:
            if tr.height < 2:
                raise ConfigError("depth", "the branching estimate needs depth >= 2")
            br = treemod.branching_number_estimate_tree(tr, args.tol)
        result = {"lambda": args.lam, "weight": weight, "level": level, "cutset_size": len(cs.vertices),
                  "cutset": [int(v) for v in cs.vertices], "antichain": cs.antichain, "branching_estimate": br}
    row = [args.lam, weight, level, result["cutset_size"], br]
    _emit(args, CUTSET_HEADER, [row], result)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", "-o", help="output path (default: stdout)")


def _add_channel(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--theta", type=str, required=required, help="second eigenvalue, |theta| < 1")
    p.add_argument("--delta", type=str, default="0" if required else None, help="asymmetry")


def _add_tree_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tree", help="tree file: one 'id parent theta delta' line per vertex")
    p.add_argument("--arity", type=int)
    p.add_argument("--depth", type=int)
    _add_channel(p, required=False)
    p.add_argument("--exact", action="store_true", help="parse parameters as exact rationals")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treerecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="exact magnetization law level by level on a complete tree")
    _add_common(p)
    p.add_argument("--arity", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    _add_channel(p, required=True)
    p.add_argument("--bin-width", type=float, default=1e-6)
    p.add_argument("--max-atoms", type=int, default=exact.DEFAULT_MAX_ATOMS)
    p.add_argument("--no-binning", action="store_true", help="fail instead of binning when atoms explode")
    p.add_argument("--check", action="store_true", help="exit 1 if the symmetric recursion bound fails")
    p.add_argument("--exact", action="store_true", help="rational arithmetic (small depths only)")
    p.set_defaults(func=run_evolve)

    p = sub.add_parser("simulate", help="Monte Carlo moments and TV distance")
    _add_common(p)
    _add_tree_source(p)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("bruteforce", help="magnetization law by enumerating leaf configurations")
    _add_common(p)
    _add_tree_source(p)
    p.add_argument("--max-leaves", type=int, default=20)
    p.set_defaults(func=run_bruteforce)

    p = sub.add_parser("bounds", help="admissible asymmetry and Kesten-Stigum class")
    _add_common(p)
    p.add_argument("--theta0", help="comma-separated values; '1/sqrt(d)' is accepted")
    p.add_argument("--grid", help="start:stop:count")
    p.add_argument("--arities", help="comma-separated d; adds theta0 = 1/sqrt(d) for each")
    p.add_argument("--arity", type=int, help="arity for the Kesten-Stigum column of --theta0/--grid rows")
    p.add_argument("--empirical", action="store_true", help="also search the grid check for its largest delta")
    p.set_defaults(func=run_bounds)

    p = sub.add_parser("verify", help="identity residuals by full enumeration")
    _add_common(p)
    _add_tree_source(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-leaves", type=int, default=16)
    p.set_defaults(func=run_verify)

    p = sub.add_parser("cutset", help="minimal cutset weight and branching-number estimate")
    _add_common(p)
    _add_tree_source(p)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--branching", action="store_true", help="also estimate the branching number")
    p.add_argument("--tol", type=float, default=1e-6, help="weight threshold for the branching estimate")
    p.set_defaults(func=run_cutset)
    parser.subparsers = dict(sub.choices)
    return parser


def _read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("config", f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults that flags override."""
    command = next((a for a in argv if not a.startswith("-")), None)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if command not in parser.subparsers or not known.config:
        return parser.parse_args(argv)
    try:
        values = _read_config(known.config)
    except OSError as e:
        raise ConfigError("config", f"cannot read {known.config}: {e}") from None
    sub = parser.subparsers[command]
    actions = {a.dest: a for a in sub._actions}
    for k, v in values.items():
        if k not in actions or k in ("help", "config"):
            raise ConfigError(k, f"unknown key in {known.config}")
        if actions[k].nargs == 0:  # on/off flags
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(k, f"expected a boolean in {known.config}, got {v!r}")
            values[k] = v.lower() in ("true", "1", "yes")
        actions[k].required = False
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (ConfigError, ValueError) as e:
        print(f"treerecon {argv[0] if argv else ''}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
