"""Exact law of the weighted root magnetization.

For leaf states ``sigma`` the magnetization is

    X = (P[+ | sigma] - pi_plus) / pi_minus,

which lies in ``[-pi_plus/pi_minus, 1]`` and has mean zero under the
stationary leaf law. A :class:`MagnetizationDistribution` stores the atoms
of X under that stationary law; the root-conditioned laws are recovered by
reweighting with the densities ``1 + (pi_minus/pi_plus) X`` (root ``+``)
and ``1 - X`` (root ``-``).

Trees are grown with two operations: :func:`add_edge` (prepend an edge
above the root, which scales X by the edge's theta) and :func:`merge`
(glue two trees at their roots). :func:`evolve` repeats them level by
level for complete trees; :func:`brute_force_distribution` is the
independent enumeration oracle.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from numbers import Real
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
from scipy.signal import fftconvolve

from . import kernels
from ._enum import vertex_likelihoods
from .channel import Channel
from .tree import TreeSpec

__all__ = [
    "MagnetizationDistribution",
    "BinningPolicy",
    "DistributionError",
    "AtomExplosionError",
    "OracleCapError",
    "point_mass",
    "leaf_base_distribution",
    "tilt",
    "add_edge",
    "merge",
    "consolidate",
    "evolve",
    "tv_distance",
    "brute_force_distribution",
    "root_posterior",
    "magnetization_from_posterior",
    "tv_distance_direct",
]

STATIONARY, PLUS, MINUS = "stationary", "plus", "minus"
# atoms closer than this are the same value computed along different paths
DEDUP_TOL = 1e-12
# pairs whose merge denominator is below this are contradictory evidence (zero mass)
DEN_TOL = 1e-12
DEFAULT_MAX_ATOMS = 200_000
HARD_PAIR_LIMIT = 20_000_000


class DistributionError(ValueError):
    """A magnetization law violates one of its structural invariants."""


class AtomExplosionError(RuntimeError):
    """Unbinned evolution would exceed the atom cap."""


class OracleCapError(ValueError):
    """Brute-force enumeration refused: too many leaves."""


@dataclass(frozen=True)
class BinningPolicy:
    """How evolution keeps atom counts bounded.

    Merges with at most ``pair_limit`` atom pairs are computed pair by pair
    and then binned on a grid of ``bin_width``, each bin replaced by its
    probability-weighted mean. Larger merges, or merges whose binned
    output would still exceed ``max_atoms``, run on a lattice of
    ``max_atoms`` points uniform in the log-likelihood ratio
    ``log((1 + r X) / (1 - X))``; on that lattice merging is a convolution.
    Each atom is split between its two neighbouring lattice points so that
    mass and mean are kept exactly; this raises the second moment by at
    most ``gap**2 / 4`` per unit mass, and the raise is accumulated in
    ``MagnetizationDistribution.moment_error``.
    """

    bin_width: float = 1e-6
    max_atoms: int = DEFAULT_MAX_ATOMS
    pair_limit: int = 4_000_000


@dataclass(frozen=True, eq=False)
class MagnetizationDistribution:
    values: np.ndarray
    probs: np.ndarray
    pi_plus: Real
    pi_minus: Real
    measure: str = STATIONARY
    moment_error: float = 0.0

    @property
    def exact(self) -> bool:
        return self.values.dtype == object

    @property
    def pi_ratio(self):
        return self.pi_minus / self.pi_plus

    @property
    def Delta(self):
        return self.pi_ratio - 1

    @property
    def n_atoms(self) -> int:
        return len(self.values)

    def total_mass(self):
        return self.probs.sum()

    def mean(self):
        return (self.probs * self.values).sum()

    def second_moment(self):
        return (self.probs * self.values * self.values).sum()

    def check(self, tol: float = 1e-12) -> None:
        """Raise :class:`DistributionError` unless all invariants hold."""
        if len(self.values) != len(self.probs):
            raise DistributionError("values/probs length mismatch")
        if np.any(self.probs < 0):
            raise DistributionError("negative probability")
        if abs(self.total_mass() - 1) > tol:
            raise DistributionError(f"mass {float(self.total_mass())!r} != 1")
        lo = -1 / self.pi_ratio
        slack = 0 if self.exact else tol
        if np.any(self.values > 1 + slack) or np.any(self.values < lo - slack):
            raise DistributionError("atom outside [-pi_plus/pi_minus, 1]")
        if self.measure == STATIONARY and abs(self.mean()) > tol:
            raise DistributionError(f"stationary mean {float(self.mean())!r} != 0")

    def to_json_dict(self) -> dict:
        from .analysis import moments

        mt = moments(self) if self.measure == STATIONARY else None
        out = {
            "measure": self.measure,
            "pi_plus": float(self.pi_plus),
            "pi_minus": float(self.pi_minus),
            "atoms": [[float(v), float(p)] for v, p in zip(self.values, self.probs)],
        }
        if mt is not None:
            out["moments"] = {"m": float(mt.m), "m_plus": float(mt.m_plus), "m_minus": float(mt.m_minus)}
        out["moment_error"] = float(self.moment_error)
        return out

    def write_json(self, fh: TextIO) -> None:
        json.dump(self.to_json_dict(), fh, indent=1)

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh)
        w.writerow(["value", "prob"])
        for v, p in zip(self.values, self.probs):
            w.writerow([f"{float(v):.12g}", f"{float(p):.12g}"])


# ------------------------------------------------------------------ helpers

def _new(values, probs, like, **kw) -> MagnetizationDistribution:
    return MagnetizationDistribution(values, probs, like.pi_plus, like.pi_minus, **kw)


def _aggregate(values: np.ndarray, probs: np.ndarray, exact: bool, tol: float = DEDUP_TOL):
    """Sort atoms, drop zero mass, and fuse coinciding values."""
    if exact:
        acc: dict = {}
        for v, p in zip(values, probs):
            if p != 0:
                acc[v] = acc.get(v, 0) + p
        keys = sorted(acc)
        return np.array(keys, dtype=object), np.array([acc[k] for k in keys], dtype=object)
    values = np.asarray(values, dtype=np.float64).ravel()
    probs = np.asarray(probs, dtype=np.float64).ravel()
    keep = probs > 0
    values, probs = values[keep], probs[keep]
    if len(values) == 0:
        return values, probs
    order = np.argsort(values, kind="stable")
    values, probs = values[order], probs[order]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(values) > tol) + 1))
    mass = np.add.reduceat(probs, starts)
    first = np.add.reduceat(probs * values, starts)
    return first / mass, mass


def _same_pi(a, b) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) <= 1e-12


def point_mass(pi_plus, pi_minus) -> MagnetizationDistribution:
    exact = isinstance(pi_plus, Fraction)
    dtype = object if exact else np.float64
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    return MagnetizationDistribution(
        np.array([zero], dtype=dtype), np.array([one], dtype=dtype), pi_plus, pi_minus
    )


def leaf_base_distribution(channel: Channel) -> MagnetizationDistribution:
    """Depth-0 law: the root is itself observed, so X is 1 or -pi_plus/pi_minus."""
    dtype = object if channel.is_exact else np.float64
    values = np.array([-channel.pi_plus / channel.pi_minus, 1 + 0 * channel.pi_plus], dtype=dtype)
    probs = np.array([channel.pi_minus, channel.pi_plus], dtype=dtype)
    return MagnetizationDistribution(values, probs, channel.pi_plus, channel.pi_minus)


def tilt(dist: MagnetizationDistribution, root_state: str) -> MagnetizationDistribution:
    """Reweight a stationary law into the root-``+`` or root-``-`` law."""
    if dist.measure != STATIONARY:
        raise DistributionError("only a stationary law can be tilted")
    if root_state in ("+", PLUS, 1):
        w = 1 + dist.pi_ratio * dist.values
        measure = PLUS
    elif root_state in ("-", MINUS, -1):
        w = 1 - dist.values
        measure = MINUS
    else:
        raise ValueError(f"root_state must be '+' or '-', got {root_state!r}")
    tol = 0 if dist.exact else 1e-12
    if np.any(w < -tol):
        raise DistributionError("negative Radon-Nikodym weight: corrupted distribution")
    if not dist.exact:
        w = np.maximum(w, 0.0)
    return replace(dist, probs=dist.probs * w, measure=measure)


def add_edge(dist: MagnetizationDistribution, channel: Channel) -> MagnetizationDistribution:
    """Law of the magnetization after putting a new root above the old one.

    The stationary leaf law does not change, and each atom is scaled by
    the edge's theta.
    """
    if dist.measure != STATIONARY:
        raise DistributionError("add_edge expects a stationary law")
    if not _same_pi(dist.pi_plus, channel.pi_plus):
        raise DistributionError("edge channel has a different stationary distribution")
    theta = channel.theta if dist.exact else float(channel.theta)
    values, probs = _aggregate(dist.values * theta, dist.probs, dist.exact)
    return replace(dist, values=values, probs=probs,
                   moment_error=dist.moment_error * float(theta) ** 2)


# -------------------------------------------------------------------- merge

def _merge_pairwise(a: MagnetizationDistribution, b: MagnetizationDistribution):
    r = a.pi_ratio
    D = a.Delta
    y = a.values[:, None]
    z = b.values[None, :]
    yz = y * z
    den = (1 + r * yz).ravel()
    w = (a.probs[:, None] * b.probs[None, :]).ravel() * den
    num = (y + z + D * yz).ravel()
    if a.exact:
        if any(d < 0 for d in den):
            raise DistributionError("merge denominator negative: corrupted input")
        keep = np.array([d > 0 for d in den], dtype=bool)
    else:
        if np.any(den < -DEN_TOL):
            raise DistributionError("merge denominator negative: corrupted input")
        keep = den > DEN_TOL
    x = num[keep] / den[keep]
    return _aggregate(x, w[keep], a.exact)


def _ell(x, r):
    return np.log1p(r * x) - np.log1p(-x)


def _x_of_ell(ell, pi_plus, pi_minus):
    e = np.exp(-np.abs(ell))
    em1 = -np.expm1(-np.abs(ell))  # 1 - e, accurate near 0
    pos = pi_plus * em1 / (pi_plus + pi_minus * e)
    neg = -pi_plus * em1 / (pi_plus * e + pi_minus)
    return np.where(ell >= 0, pos, neg)


def _snap(values, probs, ell, h, pi_plus, pi_minus):
    """Split each atom between its two neighbouring lattice points, keeping mass and mean."""
    j = np.floor(ell / h).astype(np.int64)
    j0 = int(j.min())
    x_lo = _x_of_ell(j * h, pi_plus, pi_minus)
    x_hi = _x_of_ell((j + 1) * h, pi_plus, pi_minus)
    gap = x_hi - x_lo
    w_hi = np.clip(np.divide(values - x_lo, gap, out=np.zeros_like(gap), where=gap > 0), 0.0, 1.0)
    size = int(j.max()) - j0 + 2
    mass = np.bincount(j - j0, weights=probs * (1 - w_hi), minlength=size)
    mass += np.bincount(j - j0 + 1, weights=probs * w_hi, minlength=size)
    spread = float(np.sum(probs * np.clip((x_hi - values) * (values - x_lo), 0.0, None)))
    return mass, j0, spread


def _convolve(a, b):
    if len(a) * len(b) <= 2_000_000:
        return np.convolve(a, b)
    return fftconvolve(a, b)


def _is_endpoint(values, r):
    return (1 + r * values <= 1e-14) | (1 - values <= 1e-14)


def _merge_lattice(a, b, n_points):
    r = float(a.pi_ratio)
    D = float(a.Delta)
    pp, pm = float(a.pi_plus), float(a.pi_minus)
    ea, eb = _is_endpoint(a.values, r), _is_endpoint(b.values, r)
    pieces_v, pieces_p = [], []
    extra_error = 0.0
    # pairs that involve an endpoint atom (X = 1 or X = -1/r) are few: do them directly
    if ea.any() or eb.any():
        for av, ap_, bv, bp in (
            (a.values[ea], a.probs[ea], b.values, b.probs),
            (a.values[~ea], a.probs[~ea], b.values[eb], b.probs[eb]),
        ):
            if len(av) and len(bv):
                part_a = MagnetizationDistribution(av, ap_, a.pi_plus, a.pi_minus)
                part_b = MagnetizationDistribution(bv, bp, a.pi_plus, a.pi_minus)
                v, p = _merge_pairwise(part_a, part_b)
                pieces_v.append(v)
                pieces_p.append(p)
    av, ap_ = a.values[~ea], a.probs[~ea]
    bv, bp = b.values[~eb], b.probs[~eb]
    if len(av) and len(bv):
        la, lb = _ell(av, r), _ell(bv, r)
        span = float(la.max() - la.min() + lb.max() - lb.min())
        if span <= 0:
            part_a = MagnetizationDistribution(av, ap_, a.pi_plus, a.pi_minus)
            part_b = MagnetizationDistribution(bv, bp, a.pi_plus, a.pi_minus)
            v, p = _merge_pairwise(part_a, part_b)
        else:
            # snapped lattices have at most span_a/h + 2 and span_b/h + 2 points, their
            # convolution span/h + 3; with the two endpoint atoms that stays within n_points
            h = span / max(n_points - 5, 1)
            A, a0, sa = _snap(av, ap_, la, h, pp, pm)
            B, b0, sb = _snap(bv, bp, lb, h, pp, pm)
            xa = _x_of_ell((a0 + np.arange(len(A))) * h, pp, pm)
            xb = _x_of_ell((b0 + np.arange(len(B))) * h, pp, pm)
            C = pp * _convolve(A * (1 + r * xa), B * (1 + r * xb))
            C += pm * _convolve(A * (1 - xa), B * (1 - xb))
            np.maximum(C, 0.0, out=C)
            v = _x_of_ell((a0 + b0 + np.arange(len(C))) * h, pp, pm)
            keep = C > 0
            v, p = v[keep], C[keep]
            extra_error = sa + sb
        pieces_v.append(v)
        pieces_p.append(p)
    values, probs = _aggregate(np.concatenate(pieces_v), np.concatenate(pieces_p), False)
    probs = probs / probs.sum()
    return values, probs, extra_error


def consolidate(dist: MagnetizationDistribution, bin_width: float) -> MagnetizationDistribution:
    """Replace all atoms in each ``bin_width`` grid cell by one atom at their weighted mean.

    Mass and mean are unchanged; the second moment drops by the
    within-cell variance, which is added to ``moment_error``.
    """
    if dist.exact or bin_width <= 0 or dist.n_atoms < 2:
        return dist
    key = np.floor(dist.values / bin_width).astype(np.int64)
    starts = np.concatenate(([0], np.flatnonzero(np.diff(key)) + 1))
    mass = np.add.reduceat(dist.probs, starts)
    keep = mass > 0
    values = np.add.reduceat(dist.probs * dist.values, starts)[keep] / mass[keep]
    mass = mass[keep]
    lost = float(dist.second_moment() - np.sum(mass * values * values))
    return replace(dist, values=values, probs=mass, moment_error=dist.moment_error + max(lost, 0.0))


def merge(
    dist_y: MagnetizationDistribution,
    dist_yhat: MagnetizationDistribution,
    channel_context: Channel | None = None,
    binning: BinningPolicy | None = None,
    max_atoms: int = DEFAULT_MAX_ATOMS,
) -> MagnetizationDistribution:
    """Law of the magnetization of two trees glued at their roots.

    The two leaf sets are independent given the root, so the joint
    stationary law of ``(y, yhat)`` has weight ``p(y) q(yhat) (1 + r y yhat)``
    and the merged magnetization is
    ``(y + yhat + Delta y yhat) / (1 + r y yhat)``.
    """
    if dist_y.measure != STATIONARY or dist_yhat.measure != STATIONARY:
        raise DistributionError("merge expects stationary laws")
    if not _same_pi(dist_y.pi_plus, dist_yhat.pi_plus):
        raise DistributionError("cannot merge laws built under different stationary distributions")
    if channel_context is not None and not _same_pi(dist_y.pi_plus, channel_context.pi_plus):
        raise DistributionError("channel context has a different stationary distribution")
    n_pairs = dist_y.n_atoms * dist_yhat.n_atoms
    err = dist_y.moment_error + dist_yhat.moment_error
    if binning is None or dist_y.exact:
        if n_pairs > HARD_PAIR_LIMIT:
            raise AtomExplosionError(
                f"unbinned merge of {dist_y.n_atoms} x {dist_yhat.n_atoms} atoms; pass a BinningPolicy"
            )
        values, probs = _merge_pairwise(dist_y, dist_yhat)
        if len(values) > max_atoms:
            raise AtomExplosionError(f"{len(values)} atoms exceed the cap of {max_atoms}")
        return _new(values, probs, dist_y, moment_error=err)
    if n_pairs <= binning.pair_limit:
        values, probs = _merge_pairwise(dist_y, dist_yhat)
        out = consolidate(_new(values, probs, dist_y, moment_error=err), binning.bin_width)
        if out.n_atoms <= binning.max_atoms:
            return out
    values, probs, extra = _merge_lattice(dist_y, dist_yhat, binning.max_atoms)
    return _new(values, probs, dist_y, moment_error=err + extra)


def evolve(
    arity: int,
    channel: Channel,
    depth: int,
    binning: BinningPolicy | None = None,
    max_atoms: int = DEFAULT_MAX_ATOMS,
) -> list[MagnetizationDistribution]:
    """Magnetization laws of the complete ``arity``-ary tree at depths 0..depth."""
    if arity < 1 or depth < 0:
        raise ValueError("need arity >= 1 and depth >= 0")
    dists = [leaf_base_distribution(channel)]
    for _ in range(depth):
        child = add_edge(dists[-1], channel)
        cur = child
        for _ in range(arity - 1):
            cur = merge(cur, child, binning=binning, max_atoms=max_atoms)
        dists.append(cur)
    return dists


def tv_distance(dist: MagnetizationDistribution):
    """Total variation between the root-+ and root-- leaf laws.

    Both are densities against the stationary law, and they differ by
    ``(1 + r) X``, so the distance is ``(1 + r) E|X| / 2``.
    """
    return (1 + dist.pi_ratio) * (dist.probs * abs(dist.values)).sum() / 2


# ------------------------------------------------------------------- oracle

def magnetization_from_posterior(post, pi_plus, pi_minus):
    return (post - pi_plus) / pi_minus


def _edge_arrays(tree: TreeSpec):
    ep = np.zeros(tree.n_vertices)
    em = np.zeros(tree.n_vertices)
    table_p = np.array([float(ch.eps_plus) for ch in tree.channels])
    table_m = np.array([float(ch.eps_minus) for ch in tree.channels])
    ep[1:] = table_p[tree.edge_channel[1:]]
    em[1:] = table_m[tree.edge_channel[1:]]
    return ep, em


def brute_force_distribution(
    tree: TreeSpec, max_leaves: int = 20, exact: bool | None = None
) -> MagnetizationDistribution:
    """Law of X by enumerating every leaf configuration.

    Each configuration's conditional probabilities come from the upward
    likelihood pass, with no use of the add-edge/merge identities.
    """
    n_leaves = len(tree.leaves)
    if n_leaves > max_leaves:
        raise OracleCapError(f"{n_leaves} leaves exceed the enumeration cap of {max_leaves}")
    if exact is None:
        exact = tree.is_exact
    pp, pm = tree.pi_plus, tree.pi_minus
    if exact:
        if not tree.is_exact:
            raise ValueError("exact enumeration needs a tree with rational channels")
        lp, lm = vertex_likelihoods(tree, exact=True)
        p = pp * lp[0] + pm * lm[0]
        keep = np.array([q > 0 for q in p], dtype=bool)
        post = pp * lp[0][keep] / p[keep]
        values, probs = _aggregate((post - pp) / pm, p[keep], True)
        return MagnetizationDistribution(values, probs, pp, pm)
    ep, em = _edge_arrays(tree)
    values, probs = kernels.enumerate_configs(
        tree.parent, tree.child_start, tree.child_count, ep, em, float(pp), tree.leaves
    )
    values, probs = _aggregate(values, probs, False)
    return MagnetizationDistribution(values, probs, float(pp), float(pm))


def _parse_state(s) -> int:
    if s in ("+", 1, True, "1"):
        return 1
    if s in ("-", -1, False, "-1"):
        return -1
    raise ValueError(f"leaf state must be '+' or '-', got {s!r}")


def root_posterior(tree: TreeSpec, leaf_config: Sequence | Mapping) -> Real:
    """P[root = + | leaf states], by a normalised upward likelihood pass.

    ``leaf_config`` is either a sequence aligned with ``tree.leaves`` or a
    mapping from leaf vertex index to state.
    """
    leaves = [int(v) for v in tree.leaves]
    if isinstance(leaf_config, Mapping):
        missing = [v for v in leaves if v not in leaf_config]
        if missing:
            raise ValueError(f"no state for leaves {missing}")
        states = {v: _parse_state(leaf_config[v]) for v in leaves}
    else:
        if len(leaf_config) != len(leaves):
            raise ValueError(f"expected {len(leaves)} leaf states, got {len(leaf_config)}")
        states = {v: _parse_state(s) for v, s in zip(leaves, leaf_config)}
    exact = tree.is_exact
    one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)
    lp = [zero] * tree.n_vertices
    lm = [zero] * tree.n_vertices
    for v in range(tree.n_vertices - 1, -1, -1):
        if tree.child_count[v] == 0:
            lp[v], lm[v] = (one, zero) if states[v] == 1 else (zero, one)
            continue
        ap = am = one
        for c in tree.children(v):
            ch = tree.channel(c)
            ep, em = (ch.eps_plus, ch.eps_minus) if exact else (float(ch.eps_plus), float(ch.eps_minus))
            ap = ap * ((1 - ep) * lp[c] + ep * lm[c])
            am = am * ((1 - em) * lp[c] + em * lm[c])
        tot = ap + am
        if tot == 0:
            raise ValueError("leaf configuration has probability zero")
        lp[v], lm[v] = ap / tot, am / tot
    pp, pm = (tree.pi_plus, tree.pi_minus) if exact else (float(tree.pi_plus), float(tree.pi_minus))
    den = pp * lp[0] + pm * lm[0]
    if den == 0:
        raise ValueError("leaf configuration has probability zero")
    return pp * lp[0] / den


def tv_distance_direct(tree: TreeSpec, exact: bool | None = None):
    """Half the L1 distance between the root-+ and root-- leaf laws, by enumeration."""
    if exact is None:
        exact = tree.is_exact
    lp, lm = vertex_likelihoods(tree, exact=exact)
    return abs(lp[0] - lm[0]).sum() / 2
