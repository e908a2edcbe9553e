"""Moment functionals, threshold classification and the inequality checks.

Everything here is a pure function of its arguments. The heavier routine,
:func:`verify_identities`, enumerates all leaf configurations of a small
tree and measures how far each add/merge identity is from holding.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from numbers import Real

import numpy as np

from ._enum import leaf_minus_mask, vertex_likelihoods
from .channel import Channel, channel_from_theta_delta
from .exact import STATIONARY, MagnetizationDistribution, brute_force_distribution
from .tree import TreeSpec

__all__ = [
    "MomentTriple",
    "BoundReport",
    "KSResult",
    "IdentityReport",
    "GridReport",
    "moments",
    "ks_condition",
    "delta0_bound",
    "symmetric_recursion_bound",
    "basic_inequality_terms",
    "basic_inequality_grid",
    "empirical_delta0_search",
    "regular_level_cutset_sum",
    "level_cutset_sums",
    "has_mixed_signs",
    "is_admissible",
    "induction_step_slacks",
    "verify_identities",
]

SUBCRITICAL, CRITICAL, SUPERCRITICAL = "subcritical", "critical", "supercritical"
KS_TOL = 1e-12


@dataclass(frozen=True)
class MomentTriple:
    """Second moments of X under the stationary, root-+ and root-- laws."""

    m: Real
    m_plus: Real
    m_minus: Real
    rho: Real

    def to_json_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


def moments(dist: MagnetizationDistribution) -> MomentTriple:
    if dist.measure != STATIONARY:
        raise ValueError("moments are defined from the stationary law")
    v, p = dist.values, dist.probs
    sq = p * v * v
    m = sq.sum()
    m_plus = (sq * (1 + dist.pi_ratio * v)).sum()
    m_minus = (sq * (1 - v)).sum()
    rho = m_plus / m if m != 0 else m * 0
    return MomentTriple(m, m_plus, m_minus, rho)


@dataclass(frozen=True)
class KSResult:
    classification: str
    product: float


def ks_condition(arity: int, theta: Real) -> KSResult:
    """Compare d * theta^2 with 1 (equality within 1e-12 counts as critical)."""
    if arity < 1:
        raise ValueError("arity must be >= 1")
    prod = arity * float(theta) ** 2
    if abs(prod - 1) <= KS_TOL:
        cls = CRITICAL
    elif prod > 1:
        cls = SUPERCRITICAL
    else:
        cls = SUBCRITICAL
    return KSResult(cls, prod)


@dataclass(frozen=True)
class BoundReport:
    theta0: float
    beta: float
    delta_bar: float
    ks_product: float | None = None
    classification: str | None = None

    def to_json_dict(self) -> dict:
        return asdict(self)


def _beta(theta0: float) -> float:
    # smallest root of c - b*x + a*x^2 with c = 1 - t, b = 4 + 2t, a = 3 - t;
    # the discriminant is 4(1 + 8t), and c/q with q = (b + sqrt(disc))/2 avoids cancellation
    q = 2.0 + theta0 + math.sqrt(1.0 + 8.0 * theta0)
    return (1.0 - theta0) / q


def delta0_bound(theta0: Real, arity: int | None = None) -> BoundReport:
    """The explicit admissible asymmetry (1 - theta0) * beta(theta0).

    beta is the smaller root of
    ``(1 - theta0) - (4 + 2 theta0) beta + (3 - theta0) beta^2 = 0``.
    When ``arity`` is given the Kesten-Stigum product and class at
    ``theta0`` are filled in as well.
    """
    t = float(theta0)
    if not 0.0 <= t < 1.0:
        raise ValueError(f"theta0 must lie in [0, 1), got {theta0!r}")
    beta = _beta(t)
    ks = ks_condition(arity, t) if arity is not None else None
    return BoundReport(
        theta0=t,
        beta=beta,
        delta_bar=(1.0 - t) * beta,
        ks_product=None if ks is None else ks.product,
        classification=None if ks is None else ks.classification,
    )


def symmetric_recursion_bound(m_prev: Real, arity: int, theta: Real) -> float:
    """Upper bound on the next-level second moment for a symmetric channel."""
    if not -1e-12 <= m_prev <= 1 + 1e-12:
        raise ValueError("m_prev must lie in [0, 1]")
    t2 = float(theta) ** 2
    return arity * t2 * m_prev - (arity - 1) * t2 * t2 * m_prev * m_prev


def basic_inequality_terms(rho1, rho2, theta, pi_ratio):
    """The two brackets whose combination A - Delta*B must be nonnegative.

    ``A = rho1 + (1 - rho1) [(1 - theta) + theta rho2]`` and
    ``B = 1 - rho1 [(1 - theta) + theta rho2] / pi_ratio``.
    Accepts scalars or broadcastable arrays.
    """
    rho1 = np.asarray(rho1, dtype=float)
    rho2 = np.asarray(rho2, dtype=float)
    if not abs(theta) < 1:
        raise ValueError("need |theta| < 1")
    if pi_ratio < 1:
        raise ValueError("pi_ratio must be >= 1 (canonical orientation)")
    top = 1.0 + pi_ratio  # 1 / pi_plus
    slack = 1e-12 * top
    if np.any(rho1 < -slack) or np.any(rho1 > top + slack) or np.any(rho2 < -slack) or np.any(rho2 > top + slack):
        raise ValueError("rho arguments must lie in [0, 1/pi_plus]")
    inner = (1 - theta) + theta * rho2
    A = rho1 + (1 - rho1) * inner
    B = 1 - rho1 * inner / pi_ratio
    if A.ndim == 0:
        return float(A), float(B)
    return A, B


@dataclass(frozen=True)
class GridReport:
    theta: float
    delta: float
    pi_ratio: float
    min_gap: float  # min of A - Delta*B over the grid
    min_a_margin: float  # min of A - (1 - pi_ratio^2 |theta|)
    n_grid: int

    @property
    def passed(self) -> bool:
        return self.min_gap >= -1e-12 and self.min_a_margin >= -1e-12

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def basic_inequality_grid(theta: float, delta: float, n_grid: int = 101) -> GridReport:
    """Evaluate A - Delta*B and the lower bound on A over an n x n grid of (rho1, rho2)."""
    ch = channel_from_theta_delta(float(theta), float(delta))
    r = float(ch.pi_ratio)
    th = float(ch.theta)
    rho = np.linspace(0.0, 1.0 + r, n_grid)
    A, B = basic_inequality_terms(rho[:, None], rho[None, :], th, r)
    gap = A - (r - 1) * B
    margin = A - (1 - r * r * abs(th))
    return GridReport(th, float(ch.delta), r, float(gap.min()), float(margin.min()), n_grid)


def empirical_delta0_search(theta: float, n_grid: int = 101, n_scan: int = 200, tol: float = 1e-10) -> float:
    """Largest delta for which the grid check A - Delta*B >= 0 still passes.

    Scans delta upward and bisects at the first failure. This is an
    empirical figure for exploration; it is not a certified bound.
    """
    top = (1.0 - abs(theta)) * (1.0 - 1e-9)

    def ok(d):
        return basic_inequality_grid(theta, d, n_grid).min_gap >= -1e-12

    lo = 0.0
    for d in np.linspace(0.0, top, n_scan)[1:]:
        if not ok(d):
            hi = d
            break
        lo = d
    else:
        return top
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def regular_level_cutset_sum(arity: int, theta: float, k: int) -> float:
    """Sum of eta over level k of the complete arity-ary tree: (d theta^2)^k."""
    return (arity * float(theta) ** 2) ** k


def level_cutset_sums(tree: TreeSpec) -> np.ndarray:
    from .tree import eta_all

    e = eta_all(tree)
    return np.bincount(tree.depth, weights=e)


def has_mixed_signs(tree: TreeSpec) -> bool:
    th = tree.edge_theta()[1:]
    return bool(np.any(th > 0) and np.any(th < 0))


def is_admissible(tree: TreeSpec) -> bool:
    """Whether every vertex's child edges satisfy the asymmetry hypothesis.

    At a vertex whose child edges have max |theta| = theta0, the shared
    stationary law must give asymmetry below delta_bar(theta0) for both
    signs of theta0, i.e. ``(pi_minus - pi_plus)(1 + theta0) <= delta_bar``.
    """
    gap = float(tree.pi_minus - tree.pi_plus)
    th = np.abs(tree.edge_theta())
    for v in range(tree.n_vertices):
        kids = tree.children(v)
        if not len(kids):
            continue
        t0 = float(th[kids.start:kids.stop].max())
        if gap * (1 + t0) > delta0_bound(t0).delta_bar:
            return False
    return True


def _prune(tree: TreeSpec, v: int) -> TreeSpec:
    """The tree without the branch hanging from ``v`` (v must not be the root)."""
    drop = set()
    stack = [v]
    while stack:
        u = stack.pop()
        drop.add(u)
        stack.extend(tree.children(u))
    edges = [(int(tree.parent[u]), u, tree.channel(u)) for u in range(1, tree.n_vertices) if u not in drop]
    return TreeSpec.from_edges(0, edges, default_channel=tree.channels[0])


def induction_step_slacks(tree: TreeSpec, max_leaves: int = 20) -> dict:
    """Slack of the two one-step inequalities at the root, from exact laws.

    ``basic``: m_x <= m_y + theta^2 m_z, where the last child's branch is
    split off (y: tree without it, z: the branch below its edge).
    ``induction``: m_x <= sum_a theta_a^2 m_{w_a} over the root's children.
    Positive slack means the inequality holds.
    """
    if tree.child_count[0] == 0:
        raise ValueError("the root has no children")

    def m_of(t):
        return float(brute_force_distribution(t, max_leaves=max_leaves, exact=False).second_moment())

    m_x = m_of(tree)
    kids = list(tree.children(0))
    th = tree.edge_theta()
    induction = sum(th[w] ** 2 * m_of(tree.subtree(w)) for w in kids) - m_x
    last = kids[-1]
    if len(kids) == 1:
        m_y = 0.0  # the root alone carries no leaves: a point mass at 0
    else:
        m_y = m_of(_prune(tree, last))
    basic = m_y + th[last] ** 2 * m_of(tree.subtree(last)) - m_x
    return {"basic": basic, "induction": induction}


# ------------------------------------------------------------ identities

@dataclass
class IdentityReport:
    residuals: dict
    tol: float
    n_vertices: int
    n_leaves: int
    exact: bool
    mixed_signs: bool
    notes: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def to_json_dict(self) -> dict:
        return {
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "max_residual": float(self.max_residual),
            "tol": self.tol,
            "passed": self.passed,
            "n_vertices": self.n_vertices,
            "n_leaves": self.n_leaves,
            "exact": self.exact,
            "mixed_signs": self.mixed_signs,
            "notes": list(self.notes),
        }


def _absmax(a) -> float:
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(max(abs(x) for x in a.ravel())) if a.dtype == object else float(np.max(np.abs(a)))


def verify_identities(tree: TreeSpec, tol: float = 1e-10, max_leaves: int = 16,
                      exact: bool | None = None) -> IdentityReport:
    """Evaluate every add/merge identity on a small tree by full enumeration.

    For each vertex v, the configurations of v's subtree are obtained by
    fixing all other leaves to ``+``; the likelihoods there are the
    subtree's own root-conditioned leaf laws. Residuals (max absolute
    error, over vertices and configurations):

    ``radon_nikodym``       densities of the root-conditioned laws vs 1 + rX and 1 - X
    ``mean_zero``           E[X] at every vertex
    ``tilted_means``        E+[X] - r E[X^2] and E-[X] + E[X^2]
    ``mixture``             pi_plus m_plus + pi_minus m_minus - m
    ``child_first``         E+_T[Y] - theta E+_T'[Y] (and the - version) per edge
    ``child_second``        E+_T[Y^2] - (1 - theta) E_T'[Y^2] - theta E+_T'[Y^2] (and -)
    ``add_edge``            Yhat - theta Z pointwise
    ``merge``               merged magnetization vs direct posterior, per internal vertex
    ``tv``                  E|X| form of the total variation vs half the L1 distance
    """
    n_leaves = len(tree.leaves)
    if n_leaves > max_leaves:
        raise ValueError(f"{n_leaves} leaves exceed the enumeration cap of {max_leaves}")
    if exact is None:
        exact = tree.is_exact
    lp, lm = vertex_likelihoods(tree, exact=exact)
    if exact:
        pp, pm = tree.pi_plus, tree.pi_minus
    else:
        pp, pm = float(tree.pi_plus), float(tree.pi_minus)
    r = pm / pp
    D = r - 1
    mask = leaf_minus_mask(n_leaves)
    leaf_pos = {int(v): k for k, v in enumerate(tree.leaves)}
    n = tree.n_vertices
    # bit mask of the leaves below each vertex
    below = np.zeros(n, dtype=np.int64)
    for v in range(n - 1, -1, -1):
        if v in leaf_pos:
            below[v] = 1 << leaf_pos[v]
        if v > 0:
            below[tree.parent[v]] |= below[v]
    configs = np.arange(1 << n_leaves, dtype=np.int64)
    all_bits = (1 << n_leaves) - 1
    zero = Fraction(0) if exact else 0.0

    res = {k: 0.0 for k in ("radon_nikodym", "mean_zero", "tilted_means", "mixture",
                             "child_first", "child_second", "add_edge", "merge", "tv")}

    def bump(key, val):
        res[key] = max(res[key], _absmax(val))

    def magnetization(a, b):
        # a, b: likelihoods given + / -; returns (weights, X) on positive-probability entries
        p = pp * a + pm * b
        keep = np.array([x > 0 for x in p], dtype=bool) if exact else p > 0
        return p, keep, (pp * a[keep] / p[keep] - pp) / pm

    X_of = {}
    for v in range(n):
        sel = (configs & (all_bits & ~below[v])) == 0
        a, b = lp[v][sel], lm[v][sel]
        p, keep, X = magnetization(a, b)
        X_of[v] = (sel, keep, X)
        bump("radon_nikodym", a[keep] / p[keep] - (1 + r * X))
        bump("radon_nikodym", b[keep] / p[keep] - (1 - X))
        w, wp, wm = p[keep], a[keep], b[keep]
        m = (w * X * X).sum()
        bump("mean_zero", [(w * X).sum()])
        bump("tilted_means", [(wp * X).sum() - r * m, (wm * X).sum() + m])
        bump("mixture", [pp * (wp * X * X).sum() + pm * (wm * X * X).sum() - m])
        if v == 0:
            tv_direct = abs(a - b).sum() / 2
            bump("tv", [tv_direct - (1 + r) * (w * abs(X)).sum() / 2])

    for v in range(n):
        kids = list(tree.children(v))
        if not kids:
            continue
        merged = None
        sel_v = X_of[v][0]
        for c in kids:
            ch = tree.channel(c)
            th, ep, em = (ch.theta, ch.eps_plus, ch.eps_minus) if exact else (
                float(ch.theta), float(ch.eps_plus), float(ch.eps_minus))
            sel_c, keep_c, Z = X_of[c]
            a, b = lp[c][sel_c][keep_c], lm[c][sel_c][keep_c]
            # child moments: law of the child's leaves given the parent state, via the edge
            up = (1 - ep) * a + ep * b
            dn = (1 - em) * a + em * b
            p_c = pp * a + pm * b
            bump("child_first", [(up * Z).sum() - th * (a * Z).sum(), (dn * Z).sum() - th * (b * Z).sum()])
            m_c = (p_c * Z * Z).sum()
            bump("child_second", [
                (up * Z * Z).sum() - (1 - th) * m_c - th * (a * Z * Z).sum(),
                (dn * Z * Z).sum() - (1 - th) * m_c - th * (b * Z * Z).sum(),
            ])
            # magnetization at v of the one-edge tree (v -> c subtree), on the full config space
            a_full, b_full = lp[c][sel_v], lm[c][sel_v]
            up_f = (1 - ep) * a_full + ep * b_full
            dn_f = (1 - em) * a_full + em * b_full
            den = pp * up_f + pm * dn_f
            good = np.array([x > 0 for x in den], dtype=bool) if exact else den > 0
            yhat = np.full(den.shape, zero, dtype=object if exact else float)
            yhat[good] = (pp * up_f[good] / den[good] - pp) / pm
            zc = np.full(den.shape, zero, dtype=object if exact else float)
            pc = pp * a_full + pm * b_full
            goodc = np.array([x > 0 for x in pc], dtype=bool) if exact else pc > 0
            zc[goodc] = (pp * a_full[goodc] / pc[goodc] - pp) / pm
            bump("add_edge", (yhat - th * zc)[good & goodc])
            if merged is None:
                merged = yhat
            else:
                den_m = 1 + r * merged * yhat
                ok = np.array([x > 0 for x in den_m], dtype=bool) if exact else den_m > 1e-300
                nxt = merged.copy()
                nxt[ok] = (merged[ok] + yhat[ok] + D * merged[ok] * yhat[ok]) / den_m[ok]
                merged = nxt
        _, keep_v, X_v = X_of[v]
        bump("merge", merged[keep_v] - X_v)

    report = IdentityReport(
        residuals={k: float(v) for k, v in res.items()},
        tol=tol,
        n_vertices=n,
        n_leaves=n_leaves,
        exact=bool(exact),
        mixed_signs=has_mixed_signs(tree),
    )
    if report.mixed_signs:
        report.notes.append("tree mixes positive and negative theta; bounds applied at |theta|")
    return report
