"""The compiled kernels and the numpy fallback must agree bit for bit."""
import numpy as np
import pytest

from treerecon import _fallback, kernels
from treerecon.channel import channel_from_theta_delta
from treerecon.exact import _edge_arrays
from treerecon.tree import build_regular_tree, random_tree

compiled = pytest.importorskip("treerecon._kernels")


def kernel_args(tree):
    ep, em = _edge_arrays(tree)
    return tree.parent, tree.child_start, tree.child_count, ep, em, float(tree.pi_plus)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_uniforms_identical():
    for key in (0, 1, 2 ** 63 + 5, 2 ** 64 - 1):
        a = compiled.uniforms(key, 17, 40, 13)
        b = _fallback.uniforms(key, 17, 40, 13)
        assert np.array_equal(a, b)
        assert a.min() >= 0.0 and a.max() < 1.0


def test_uniforms_look_uniform():
    u = compiled.uniforms(99, 0, 2000, 50).ravel()
    assert abs(u.mean() - 0.5) < 0.005
    counts = np.histogram(u, bins=10, range=(0, 1))[0]
    assert counts.min() > 0.95 * len(u) / 10


@pytest.mark.parametrize("root_state", [0, 1, -1])
def test_sampling_identical(root_state):
    rng = np.random.default_rng(root_state + 10)
    for tree in (random_tree(rng, max_depth=4, max_leaves=30, pi_gap=0.2),
                 build_regular_tree(2, 6, channel_from_theta_delta(0.7, 0.05))):
        args = kernel_args(tree)
        a = compiled.sample_magnetizations(*args, root_state, 2024, 100, 300)
        b = _fallback.sample_magnetizations(*args, root_state, 2024, 100, 300)
        assert np.array_equal(a, b)


def test_sampling_rescales_deep_products():
    tree = build_regular_tree(2, 12, channel_from_theta_delta(0.95, 0.01))
    args = kernel_args(tree)
    a = compiled.sample_magnetizations(*args, 1, 7, 0, 5)
    b = _fallback.sample_magnetizations(*args, 1, 7, 0, 5)
    assert np.all(np.isfinite(a)) and np.array_equal(a, b)


def test_enumeration_identical():
    rng = np.random.default_rng(4)
    for _ in range(5):
        tree = random_tree(rng, max_depth=3, max_leaves=12, pi_gap=0.1)
        args = kernel_args(tree)
        va, pa = compiled.enumerate_configs(*args, tree.leaves)
        vb, pb = _fallback.enumerate_configs(*args, tree.leaves, chunk_bits=5)
        assert np.array_equal(va, vb)
        assert np.allclose(pa, pb, rtol=1e-13, atol=1e-16)
        assert pa.sum() == pytest.approx(1.0, abs=1e-12)
