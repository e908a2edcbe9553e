"""Monte Carlo estimates of the magnetization moments and the TV distance.

Every uniform draw is a hash of ``(stream key, sample index, vertex)``
(SplitMix64 finalizer on a Weyl sequence), so sample ``i`` is the same
whether it is produced alone, inside a block, or on another worker. The
stream key is derived from the user seed and the run type (stationary,
root ``+``, root ``-``), which makes the three runs independent.

Samples are generated in fixed blocks of :data:`BLOCK` indices on a thread
pool (the compiled kernel releases the GIL); results are concatenated in
index order and reduced with numpy's pairwise summation, so the estimate
does not depend on the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .tree import TreeSpec

__all__ = [
    "McEstimate",
    "MomentEstimates",
    "stream_key",
    "worker_count",
    "sample_states",
    "sample_leaves",
    "sample_magnetizations",
    "estimate",
    "estimate_moments",
    "estimate_abs_mean",
    "estimate_tv",
]

BLOCK = 8192
_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_RUN_TAGS = {"stationary": 1, "plus": 2, "minus": 3}
_ROOT_CODE = {"stationary": 0, "plus": 1, "minus": -1}


def _mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, run: str) -> int:
    """64-bit key for one run type under a master seed."""
    if run not in _RUN_TAGS:
        raise ValueError(f"unknown run {run!r}")
    return _mix64(_mix64(seed & _MASK) + _RUN_TAGS[run] * _GAMMA)


def _root_name(root_state) -> str:
    names = {"+": "plus", "plus": "plus", 1: "plus", "-": "minus", "minus": "minus", -1: "minus",
             "stationary": "stationary", None: "stationary", 0: "stationary"}
    try:
        return names[root_state]
    except (KeyError, TypeError):
        raise ValueError(f"root_state must be '+', '-' or 'stationary', got {root_state!r}") from None


def worker_count() -> int:
    """Worker threads: ``RECON_THREADS`` if set, otherwise the CPU count."""
    env = os.environ.get("RECON_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"RECON_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_samples: int
    seed: int
    quantity: str

    def to_json_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MomentEstimates:
    """Estimates of m, m_plus, m_minus plus consistency diagnostics.

    ``mixture_residual`` is ``pi_plus m_plus + pi_minus m_minus - m`` with
    the forced-root estimates; ``rn_m_plus`` and ``rn_m_minus`` reweight
    the stationary run by the densities ``1 + rX`` and ``1 - X``.
    """

    m: McEstimate
    m_plus: McEstimate
    m_minus: McEstimate
    mixture_residual: float
    rn_m_plus: float
    rn_m_minus: float

    def __iter__(self):
        return iter((self.m, self.m_plus, self.m_minus))

    def to_json_dict(self) -> dict:
        return {
            "m": self.m.to_json_dict(),
            "m_plus": self.m_plus.to_json_dict(),
            "m_minus": self.m_minus.to_json_dict(),
            "mixture_residual": self.mixture_residual,
            "rn_m_plus": self.rn_m_plus,
            "rn_m_minus": self.rn_m_minus,
        }


def _edge_probs(tree: TreeSpec):
    ep = np.zeros(tree.n_vertices)
    em = np.zeros(tree.n_vertices)
    ep[1:] = [float(tree.channels[i].eps_plus) for i in tree.edge_channel[1:]]
    em[1:] = [float(tree.channels[i].eps_minus) for i in tree.edge_channel[1:]]
    return ep, em


def sample_states(tree: TreeSpec, root_state="stationary", seed: int = 0,
                  first_sample: int = 0, n_samples: int = 1) -> np.ndarray:
    """States (+1/-1) of every vertex, shape (n_samples, n_vertices).

    Uses the same draws as :func:`sample_magnetizations`, so sample ``i``
    here is the configuration whose magnetization that function returns.
    """
    run = _root_name(root_state)
    key = stream_key(seed, run)
    u = kernels.uniforms(key, first_sample, n_samples, tree.n_vertices)
    ep, em = _edge_probs(tree)
    plus = np.empty(u.shape, dtype=bool)
    if run == "stationary":
        plus[:, 0] = u[:, 0] < float(tree.pi_plus)
    else:
        plus[:, 0] = run == "plus"
    for v in range(1, tree.n_vertices):
        thresh = np.where(plus[:, tree.parent[v]], 1.0 - ep[v], 1.0 - em[v])
        plus[:, v] = u[:, v] < thresh
    return np.where(plus, 1, -1).astype(np.int8)


def sample_leaves(tree: TreeSpec, root_state="stationary", seed: int = 0, sample_index: int = 0) -> np.ndarray:
    """One top-down draw of the broadcast chain; leaf states aligned with ``tree.leaves``."""
    return sample_states(tree, root_state, seed, sample_index, 1)[0, tree.leaves]


def sample_magnetizations(tree: TreeSpec, n_samples: int, seed: int,
                          root_state="stationary", threads: int | None = None) -> np.ndarray:
    """Root magnetization X for samples ``0 .. n_samples-1`` of one run."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    run = _root_name(root_state)
    key = stream_key(seed, run)
    ep, em = _edge_probs(tree)
    pp = float(tree.pi_plus)
    code = _ROOT_CODE[run]

    def block(start):
        count = min(BLOCK, n_samples - start)
        return kernels.sample_magnetizations(
            tree.parent, tree.child_start, tree.child_count, ep, em, pp, code, key, start, count
        )

    starts = range(0, n_samples, BLOCK)
    threads = worker_count() if threads is None else max(1, threads)
    if threads == 1 or len(starts) == 1:
        parts = [block(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(block, starts))
    return np.concatenate(parts)


def estimate(values: np.ndarray, seed: int, quantity: str) -> McEstimate:
    """Sample mean with standard error std(ddof=1) / sqrt(n)."""
    n = len(values)
    if n < 2:
        raise ValueError("need at least two samples for a standard error")
    mean = float(np.sum(values) / n)
    stderr = float(np.std(values, ddof=1) / np.sqrt(n))
    return McEstimate(mean, stderr, n, seed, quantity)


def estimate_moments(tree: TreeSpec, n_samples: int, seed: int, threads: int | None = None) -> MomentEstimates:
    """Estimate m = E[X^2], m_plus = E+[X^2] and m_minus = E-[X^2].

    m comes from the stationary run; m_plus and m_minus from runs with
    the root forced to each state.
    """
    r = float(tree.pi_minus / tree.pi_plus)
    xs = sample_magnetizations(tree, n_samples, seed, "stationary", threads)
    xp = sample_magnetizations(tree, n_samples, seed, "plus", threads)
    xm = sample_magnetizations(tree, n_samples, seed, "minus", threads)
    m = estimate(xs * xs, seed, "m")
    m_plus = estimate(xp * xp, seed, "m_plus")
    m_minus = estimate(xm * xm, seed, "m_minus")
    pp, pm = float(tree.pi_plus), float(tree.pi_minus)
    sq = xs * xs
    return MomentEstimates(
        m=m,
        m_plus=m_plus,
        m_minus=m_minus,
        mixture_residual=pp * m_plus.mean + pm * m_minus.mean - m.mean,
        rn_m_plus=float(np.mean(sq * (1 + r * xs))),
        rn_m_minus=float(np.mean(sq * (1 - xs))),
    )


def estimate_abs_mean(tree: TreeSpec, n_samples: int, seed: int, threads: int | None = None) -> McEstimate:
    """Estimate E|X| from the stationary run."""
    xs = sample_magnetizations(tree, n_samples, seed, "stationary", threads)
    return estimate(np.abs(xs), seed, "abs_mean")


def estimate_tv(tree: TreeSpec, n_samples: int, seed: int, threads: int | None = None) -> McEstimate:
    """Estimate the root TV distance as (1 + r) E|X| / 2 from stationary samples."""
    r = float(tree.pi_minus / tree.pi_plus)
    xs = sample_magnetizations(tree, n_samples, seed, "stationary", threads)
    return estimate(0.5 * (1 + r) * np.abs(xs), seed, "tv")
