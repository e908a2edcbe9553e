"""Finite rooted trees with a channel on every edge.

Vertices are stored in breadth-first order, so ``parent[v] < v`` for every
non-root vertex and each depth level occupies a contiguous index range.
All edge channels must share one stationary distribution.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, TextIO

import numpy as np

from .channel import Channel, ChannelError, channel_from_theta_delta

__all__ = [
    "TreeError",
    "TreeSpec",
    "CutSet",
    "MAX_VERTICES",
    "build_regular_tree",
    "random_tree",
    "eta",
    "eta_all",
    "level_cutset",
    "is_cutset",
    "is_antichain",
    "min_cutset_weight",
    "min_cutset_weight_regular",
    "branching_number_estimate",
    "branching_number_estimate_tree",
    "read_tree",
    "write_tree",
    "parse_tree",
]

MAX_VERTICES = 10_000_000
_TIE_RTOL = 1e-12


class TreeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TreeSpec:
    """Rooted tree in BFS order.

    ``edge_channel[v]`` indexes ``channels`` for the edge entering ``v``;
    it is -1 at the root.
    """

    parent: np.ndarray
    edge_channel: np.ndarray
    channels: tuple[Channel, ...]
    labels: tuple[str, ...] | None = None
    depth: np.ndarray = field(init=False, repr=False)
    child_start: np.ndarray = field(init=False, repr=False)
    child_count: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        n = len(parent)
        if n == 0 or parent[0] != -1 or np.any(parent[1:] < 0) or np.any(parent[1:] >= np.arange(1, n)):
            raise TreeError("vertices must be in BFS order with the root first")
        if np.any(np.diff(parent[1:]) < 0):
            raise TreeError("children must be grouped by parent in BFS order")
        depth = np.zeros(n, dtype=np.int64)
        safe_parent = np.maximum(parent, 0)
        while True:
            nxt = depth[safe_parent] + 1
            nxt[0] = 0
            if np.array_equal(nxt, depth):
                break
            depth = nxt
        if np.any(np.diff(depth) < 0):
            raise TreeError("vertices must be sorted by depth")
        count = np.bincount(parent[1:], minlength=n).astype(np.int64)
        start = np.zeros(n, dtype=np.int64)
        # children of v occupy [start[v], start[v] + count[v])
        start[:] = 1 + np.concatenate(([0], np.cumsum(count)[:-1]))
        edge_channel = np.asarray(self.edge_channel, dtype=np.int64)
        if edge_channel.shape != (n,) or edge_channel[0] != -1 or np.any(edge_channel[1:] < 0):
            raise TreeError("edge_channel must be -1 at the root and a table index elsewhere")
        if n > 1 and edge_channel[1:].max() >= len(self.channels):
            raise TreeError("edge_channel index out of range")
        if not self.channels:
            raise TreeError("at least one channel is required (it fixes the stationary law)")
        _check_shared_pi(self.channels)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "edge_channel", edge_channel)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "child_start", start)
        object.__setattr__(self, "child_count", count)

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    @property
    def height(self) -> int:
        return int(self.depth[-1])

    @property
    def pi_plus(self):
        return self.channels[0].pi_plus

    @property
    def pi_minus(self):
        return self.channels[0].pi_minus

    @property
    def is_exact(self) -> bool:
        return all(ch.is_exact for ch in self.channels)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.child_count == 0)

    def children(self, v: int) -> range:
        s = int(self.child_start[v])
        return range(s, s + int(self.child_count[v]))

    def channel(self, v: int) -> Channel:
        """Channel on the edge from ``parent[v]`` to ``v``."""
        if v == 0:
            raise TreeError("the root has no incoming edge")
        return self.channels[self.edge_channel[v]]

    def edge_theta(self) -> np.ndarray:
        """theta of the incoming edge per vertex (0 at the root), as floats."""
        th = np.array([float(ch.theta) for ch in self.channels] + [0.0])
        return th[self.edge_channel]

    def level(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.depth == k)

    def subtree(self, v: int) -> "TreeSpec":
        """The subtree rooted at ``v``, re-indexed from 0."""
        order = [v]
        i = 0
        while i < len(order):
            order.extend(self.children(order[i]))
            i += 1
        index = {u: k for k, u in enumerate(order)}
        parent = [-1] + [index[int(self.parent[u])] for u in order[1:]]
        edge = [-1] + [int(self.edge_channel[u]) for u in order[1:]]
        labels = None if self.labels is None else tuple(self.labels[u] for u in order)
        return TreeSpec(np.array(parent), np.array(edge), self.channels, labels)

    @classmethod
    def from_edges(
        cls,
        root,
        edges: Iterable[tuple[object, object, Channel]],
        default_channel: Channel | None = None,
    ) -> "TreeSpec":
        """Build from ``(parent_id, child_id, channel)`` triples with arbitrary ids."""
        kids: dict[object, list[tuple[object, Channel]]] = {}
        seen = {root}
        for p, c, ch in edges:
            if c in seen:
                raise TreeError(f"vertex {c!r} has more than one parent (or is the root)")
            seen.add(c)
            kids.setdefault(p, []).append((c, ch))
        order = [root]
        edge_ch: list[Channel | None] = [None]
        parent = [-1]
        i = 0
        while i < len(order):
            for c, ch in kids.get(order[i], ()):
                order.append(c)
                parent.append(i)
                edge_ch.append(ch)
            i += 1
        if len(order) != len(seen) or any(p not in seen for p in kids):
            raise TreeError("edges do not form a single tree connected to the root")
        table: list[Channel] = []
        ids: dict[Channel, int] = {}
        edge_idx = [-1]
        for ch in edge_ch[1:]:
            if ch not in ids:
                ids[ch] = len(table)
                table.append(ch)
            edge_idx.append(ids[ch])
        if not table:
            if default_channel is None:
                raise TreeError("a single-vertex tree needs a channel to fix the stationary law")
            table.append(default_channel)
        return cls(np.array(parent), np.array(edge_idx), tuple(table), tuple(str(u) for u in order))


def _check_shared_pi(channels: Sequence[Channel]) -> None:
    ref = channels[0]
    for ch in channels[1:]:
        if ref.is_exact and ch.is_exact:
            same = ch.pi_plus == ref.pi_plus
        else:
            same = abs(float(ch.pi_plus) - float(ref.pi_plus)) <= 1e-12
        if not same:
            raise TreeError(
                f"edge channels must share one stationary distribution "
                f"(pi_plus {float(ref.pi_plus)!r} vs {float(ch.pi_plus)!r})"
            )


@dataclass(frozen=True)
class CutSet:
    vertices: tuple[int, ...]
    antichain: bool


def build_regular_tree(arity: int, depth: int, channel: Channel) -> TreeSpec:
    if arity < 1 or depth < 0:
        raise TreeError("need arity >= 1 and depth >= 0")
    n = sum(arity**k for k in range(depth + 1))
    if n > MAX_VERTICES:
        raise TreeError(f"tree would have {n} vertices (limit {MAX_VERTICES})")
    parent = np.empty(n, dtype=np.int64)
    parent[0] = -1
    parent[1:] = np.arange(n - 1) // arity
    edge = np.zeros(n, dtype=np.int64)
    edge[0] = -1
    return TreeSpec(parent, edge, (channel,))


def random_tree(
    rng: np.random.Generator,
    max_depth: int = 3,
    max_arity: int = 3,
    pi_gap: float | None = None,
    max_leaves: int = 16,
    theta_range: tuple[float, float] = (-0.9, 0.9),
) -> TreeSpec:
    """Random tree with independent per-edge theta and a shared stationary law.

    ``pi_gap`` is pi_minus - pi_plus; each edge gets delta = pi_gap * (1 - theta).
    """
    if pi_gap is None:
        pi_gap = float(rng.uniform(0.0, 0.3))
    while True:
        parent = [-1]
        depth = [0]
        i = 0
        while i < len(parent):
            if depth[i] < max_depth:
                lo = 1 if i == 0 else 0
                for _ in range(int(rng.integers(lo, max_arity + 1))):
                    parent.append(i)
                    depth.append(depth[i] + 1)
            i += 1
        n_leaves = len(parent) - len(set(parent[1:]))
        if n_leaves <= max_leaves:
            break
    channels = []
    for _ in range(len(parent) - 1):
        while True:
            theta = float(rng.uniform(*theta_range))
            try:
                channels.append(channel_from_theta_delta(theta, pi_gap * (1 - theta)))
                break
            except ChannelError:
                continue
    edge = np.arange(-1, len(parent) - 1)
    if not channels:
        channels = [channel_from_theta_delta(0.0, pi_gap)]
        edge = np.array([-1])
    return TreeSpec(np.array(parent), edge, tuple(channels))


def eta_all(tree: TreeSpec) -> np.ndarray:
    """Product of theta^2 along the root path, for every vertex."""
    th2 = tree.edge_theta() ** 2
    out = np.ones(tree.n_vertices)
    bounds = np.searchsorted(tree.depth, np.arange(tree.height + 2))
    for k in range(1, tree.height + 1):
        lvl = slice(bounds[k], bounds[k + 1])
        out[lvl] = out[tree.parent[lvl]] * th2[lvl]
    return out


def eta(tree: TreeSpec, v: int) -> float:
    if not 0 <= v < tree.n_vertices:
        raise TreeError(f"unknown vertex {v}")
    out = 1.0
    while v > 0:
        out *= float(tree.channel(v).theta) ** 2
        v = int(tree.parent[v])
    return out


def level_cutset(tree: TreeSpec, k: int) -> CutSet:
    """Vertices at depth k plus shallower leaves: the cutset 'at level k'."""
    verts = np.flatnonzero((tree.depth == k) | ((tree.depth < k) & (tree.child_count == 0)))
    return CutSet(tuple(int(v) for v in verts), True)


def _ancestors(tree: TreeSpec, v: int) -> list[int]:
    out = []
    while v > 0:
        v = int(tree.parent[v])
        out.append(v)
    return out


def is_cutset(tree: TreeSpec, vertices: Iterable[int]) -> bool:
    """Every root-to-leaf path meets ``vertices`` (checked path by path)."""
    s = set(int(v) for v in vertices)
    for leaf in tree.leaves:
        path = [int(leaf)] + _ancestors(tree, int(leaf))
        if not s.intersection(path):
            return False
    return True


def is_antichain(tree: TreeSpec, vertices: Iterable[int]) -> bool:
    s = set(int(v) for v in vertices)
    if not is_cutset(tree, s):
        return False
    return not any(s.intersection(_ancestors(tree, v)) for v in s)


def _vertex_weights(tree: TreeSpec, lam: float) -> np.ndarray:
    e = eta_all(tree)
    with np.errstate(divide="ignore"):
        logw = np.log(e) - tree.depth * np.log(lam)
    return np.where(e > 0, np.exp(logw), 0.0)


def min_cutset_weight(tree: TreeSpec, lam: float) -> tuple[float, CutSet]:
    """Minimum of sum eta(x) lam^-|x| over cutsets of the finite tree.

    Bottom-up: w(v) = min(own(v), sum of w over children), leaves forced to
    their own weight. Ties go to the shallower vertex.
    """
    if not lam > 0:
        raise TreeError("lambda must be positive")
    own = _vertex_weights(tree, lam)
    w = own.copy()
    take_self = np.ones(tree.n_vertices, dtype=bool)
    has_kids = tree.child_count > 0
    bounds = np.searchsorted(tree.depth, np.arange(tree.height + 2))
    for k in range(tree.height - 1, -1, -1):
        lvl = np.arange(bounds[k], bounds[k + 1])
        nxt = np.arange(bounds[k + 1], bounds[k + 2])
        csum = np.bincount(tree.parent[nxt] - lvl[0], weights=w[nxt], minlength=len(lvl))
        deeper = has_kids[lvl] & (csum < own[lvl] * (1 - _TIE_RTOL))
        w[lvl[deeper]] = csum[deeper]
        take_self[lvl[deeper]] = False
    # walk down from the root collecting the chosen vertices
    active = np.zeros(tree.n_vertices, dtype=bool)
    active[0] = True
    for k in range(1, tree.height + 1):
        lvl = np.arange(bounds[k], bounds[k + 1])
        p = tree.parent[lvl]
        active[lvl] = active[p] & ~take_self[p]
    chosen = np.flatnonzero(active & take_self)
    return float(w[0]), CutSet(tuple(int(v) for v in chosen), True)


def min_cutset_weight_regular(arity: int, theta: float, depth: int, lam: float) -> tuple[float, int]:
    """Level-collapsed DP for the complete ``arity``-ary tree.

    Every vertex at one depth has the same subtree, so the minimiser is a
    level cutset. Returns (weight, level).
    """
    if not lam > 0:
        raise TreeError("lambda must be positive")
    th2 = float(theta) ** 2
    own = np.array([(th2 / lam) ** k if th2 > 0 else float(k == 0) for k in range(depth + 1)])
    w = own[depth]
    level = depth
    for k in range(depth - 1, -1, -1):
        below = arity * w
        if below < own[k] * (1 - _TIE_RTOL):
            w = below
        else:
            w, level = own[k], k
    return float(w), level


def _bisect_transition(weight, tol: float, hi: float, max_iter: int = 200) -> float:
    # find lam where weight(lam) drops below 1 - tol; weight is nonincreasing in lam
    threshold = 1.0 - tol
    doublings = 0
    while weight(hi) >= threshold:
        hi *= 2
        doublings += 1
        if doublings > 60:
            warnings.warn("branching-number bisection found no upper bracket", RuntimeWarning)
            return float("inf")
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if weight(mid) < threshold:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            return 0.5 * (lo + hi)
    else:
        warnings.warn("branching-number bisection hit its iteration cap", RuntimeWarning)
    return 0.5 * (lo + hi)


def branching_number_estimate(arity: int, theta: float, max_depth: int, tol: float = 1e-6) -> float:
    """Finite-depth estimate of the branching number of the regular tree.

    Locates the smallest lambda at which some cutset of depth <= max_depth
    weighs less than ``1 - tol`` (the root alone weighs 1). For the regular
    tree this is arity * theta**2 * (1 - tol) ** (-1 / max_depth).
    """
    if max_depth < 2:
        raise TreeError("max_depth must be >= 2")
    return _bisect_transition(
        lambda lam: min_cutset_weight_regular(arity, theta, max_depth, lam)[0],
        tol,
        hi=2.0 * max(1.0, arity * float(theta) ** 2),
    )


def branching_number_estimate_tree(tree: TreeSpec, tol: float = 1e-6) -> float:
    """Same criterion as :func:`branching_number_estimate` on an arbitrary finite tree."""
    if tree.height < 2:
        raise TreeError("tree must have depth >= 2")
    th2 = float(np.max(tree.edge_theta() ** 2))
    return _bisect_transition(
        lambda lam: min_cutset_weight(tree, lam)[0],
        tol,
        hi=2.0 * max(1.0, int(tree.child_count.max()) * th2),
    )


# ---------------------------------------------------------------- text format

def _num(tok: str, exact: bool):
    return Fraction(tok) if exact else float(tok)


def parse_tree(lines: Iterable[str], exact: bool = False) -> TreeSpec:
    """Parse ``id parent_id theta delta`` lines (``parent_id`` is ``-`` at the root)."""
    root = None
    edges = []
    cache: dict[tuple, Channel] = {}
    root_channel = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[1:2] == ["-"]:
            if root is not None:
                raise TreeError(f"line {lineno}: second root")
            root = parts[0]
            if len(parts) >= 4 and parts[2] != "-":
                root_channel = channel_from_theta_delta(_num(parts[2], exact), _num(parts[3], exact))
            continue
        if len(parts) != 4:
            raise TreeError(f"line {lineno}: expected 'id parent_id theta delta'")
        key = (parts[2], parts[3])
        if key not in cache:
            try:
                cache[key] = channel_from_theta_delta(_num(parts[2], exact), _num(parts[3], exact))
            except (ChannelError, ValueError) as exc:
                raise TreeError(f"line {lineno}: {exc}") from None
        edges.append((parts[1], parts[0], cache[key]))
    if root is None:
        raise TreeError("no root line (parent_id '-')")
    return TreeSpec.from_edges(root, edges, default_channel=root_channel)


def read_tree(path_or_file, exact: bool = False) -> TreeSpec:
    if hasattr(path_or_file, "read"):
        return parse_tree(path_or_file, exact)
    with open(path_or_file) as fh:
        return parse_tree(fh, exact)


def write_tree(tree: TreeSpec, fh: TextIO) -> None:
    labels = tree.labels or tuple(str(v) for v in range(tree.n_vertices))
    ch0 = tree.channels[0]
    if tree.n_vertices == 1:
        fh.write(f"{labels[0]} - {ch0.theta} {ch0.delta}\n")
        return
    fh.write(f"{labels[0]} - - -\n")
    for v in range(1, tree.n_vertices):
        ch = tree.channel(v)
        fh.write(f"{labels[v]} {labels[tree.parent[v]]} {ch.theta} {ch.delta}\n")
