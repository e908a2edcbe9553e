"""Vectorised enumeration of all leaf configurations of a small tree.

Configuration ``i`` puts leaf ``tree.leaves[k]`` in state ``-`` when bit
``k`` of ``i`` is set. Arrays hold floats, or Fractions for exact trees.
"""
import numpy as np

from .tree import TreeSpec


def leaf_minus_mask(n_leaves: int) -> np.ndarray:
    """Boolean array (n_leaves, 2**n_leaves): True where the leaf is '-'."""
    configs = np.arange(1 << n_leaves, dtype=np.int64)
    return ((configs[None, :] >> np.arange(n_leaves)[:, None]) & 1).astype(bool)


def vertex_likelihoods(tree: TreeSpec, exact: bool = False):
    """Per-vertex likelihood pairs for every leaf configuration.

    Returns ``(lp, lm)``, two lists indexed by vertex; ``lp[v][i]`` is the
    probability of the leaves below ``v`` in configuration ``i`` given
    ``v`` is ``+`` (leaves outside the subtree are ignored).
    """
    leaves = tree.leaves
    mask = leaf_minus_mask(len(leaves))
    dtype = object if exact else np.float64
    one = np.array(1 if exact else 1.0, dtype=dtype)
    zero = np.array(0 if exact else 0.0, dtype=dtype)
    n = tree.n_vertices
    lp = [None] * n
    lm = [None] * n
    for k, leaf in enumerate(leaves):
        lp[leaf] = np.where(mask[k], zero, one).astype(dtype)
        lm[leaf] = np.where(mask[k], one, zero).astype(dtype)
    for v in range(n - 1, -1, -1):
        if tree.child_count[v] == 0:
            continue
        ap = np.full(mask.shape[1], one, dtype=dtype)
        am = np.full(mask.shape[1], one, dtype=dtype)
        for c in tree.children(v):
            ch = tree.channel(c)
            e_p, e_m = (ch.eps_plus, ch.eps_minus) if exact else (float(ch.eps_plus), float(ch.eps_minus))
            ap = ap * ((1 - e_p) * lp[c] + e_p * lm[c])
            am = am * ((1 - e_m) * lp[c] + e_m * lm[c])
        lp[v] = ap
        lm[v] = am
    return lp, lm


def subtree_leaf_count(tree: TreeSpec) -> np.ndarray:
    count = (tree.child_count == 0).astype(np.int64)
    for v in range(tree.n_vertices - 1, 0, -1):
        count[tree.parent[v]] += count[v]
    return count
