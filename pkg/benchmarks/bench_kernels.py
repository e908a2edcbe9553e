"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--format csv|json]

Each case runs the same call on both backends, reports the largest
difference between their outputs (zero for the samplers, rounding level
for enumeration, whose reductions are ordered differently) and the best
wall time of ``--repeat`` runs.
"""
import argparse
import csv
import json
import sys
import timeit

import numpy as np

from treerecon import _fallback
from treerecon.channel import channel_from_theta_delta
from treerecon.exact import _edge_arrays
from treerecon.tree import build_regular_tree

try:
    from treerecon import _kernels
except ImportError:
    _kernels = None


def cases():
    ch = channel_from_theta_delta(0.6, 0.01)
    for depth, n in ((6, 20000), (10, 2000), (14, 200)):
        tree = build_regular_tree(2, depth, ch)
        ep, em = _edge_arrays(tree)
        args = (tree.parent, tree.child_start, tree.child_count, ep, em, float(tree.pi_plus), 0, 12345, 0, n)
        yield f"sample d=2 depth={depth} n={n}", "sample_magnetizations", args
    for leaves in (12, 16):
        depth = {12: None, 16: 4}[leaves]
        tree = build_regular_tree(2, depth, ch) if depth else build_regular_tree(12, 1, ch)
        ep, em = _edge_arrays(tree)
        args = (tree.parent, tree.child_start, tree.child_count, ep, em, float(tree.pi_plus), tree.leaves)
        yield f"enumerate leaves={leaves}", "enumerate_configs", args
    yield "uniforms 2000x2047", "uniforms", (99, 0, 2000, 2047)


def max_diff(a, b):
    if not isinstance(a, tuple):
        a, b = (a,), (b,)
    return max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float)))) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rows = []
    for label, name, call_args in cases():
        fast, slow = getattr(_kernels, name), getattr(_fallback, name)
        diff = max_diff(fast(*call_args), slow(*call_args))
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat))
        rows.append({"case": label, "cython_s": round(t_fast, 5), "python_s": round(t_slow, 5),
                     "speedup": round(t_slow / t_fast, 2), "max_abs_diff": diff})
    if args.format == "json":
        json.dump(rows, sys.stdout, indent=1)
        print()
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return 0 if all(r["max_abs_diff"] <= 1e-12 for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
