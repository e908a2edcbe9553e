from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treerecon import exact as E
from treerecon.channel import channel_from_theta_delta
from treerecon.tree import TreeSpec, build_regular_tree, random_tree

F = Fraction
SYM6 = channel_from_theta_delta(F(3, 5), 0)
ASYM = channel_from_theta_delta(F(1, 2), F(1, 10))


def atoms(dist):
    return list(zip(dist.values, dist.probs))


def graft(trees_and_channels, default):
    """Join subtrees under a fresh root; each entry is (tree, channel of the new edge)."""
    edges = []
    for i, (t, ch) in enumerate(trees_and_channels):
        edges.append(("root", (i, 0), ch))
        for v in range(1, t.n_vertices):
            edges.append(((i, int(t.parent[v])), (i, v), t.channel(v)))
    return TreeSpec.from_edges("root", edges, default_channel=default)


def test_leaf_base_distribution():
    sym = E.leaf_base_distribution(channel_from_theta_delta(0.3, 0.0))
    assert atoms(sym) == [(-1.0, 0.5), (1.0, 0.5)]
    assert sym.second_moment() == 1.0
    base = E.leaf_base_distribution(ASYM)
    assert atoms(base) == [(F(-2, 3), F(3, 5)), (1, F(2, 5))]
    assert base.mean() == 0
    assert base.second_moment() == ASYM.pi_plus + ASYM.pi_minus * (ASYM.pi_plus / ASYM.pi_minus) ** 2


def test_tilt_base_and_mixture():
    base = E.leaf_base_distribution(SYM6)
    plus = E.tilt(base, "+")
    assert atoms(plus) == [(-1, 0), (1, 1)]
    d1 = E.evolve(2, ASYM, 2)[2]
    p, m = E.tilt(d1, "+"), E.tilt(d1, "-")
    assert list(d1.pi_plus * p.probs + d1.pi_minus * m.probs) == list(d1.probs)
    assert p.total_mass() == 1 and m.total_mass() == 1
    with pytest.raises(ValueError):
        E.tilt(d1, "x")
    with pytest.raises(E.DistributionError):
        E.tilt(p, "+")


def test_tilt_detects_corruption():
    bad = E.MagnetizationDistribution(np.array([-3.0, 1.0]), np.array([0.25, 0.75]), 0.5, 0.5)
    with pytest.raises(E.DistributionError):
        E.tilt(bad, "+")


def test_tilted_mean_depth_one():
    d1 = E.evolve(2, SYM6, 1)[1]
    assert E.tilt(d1, "+").mean() == F(153, 289)


def test_add_edge_examples():
    base = E.leaf_base_distribution(channel_from_theta_delta(0.6, 0.0))
    out = E.add_edge(base, channel_from_theta_delta(0.6, 0.0))
    assert np.allclose(out.values, [-0.6, 0.6]) and np.allclose(out.probs, [0.5, 0.5])
    assert out.second_moment() == pytest.approx(0.36)
    zero = E.add_edge(base, channel_from_theta_delta(0.0, 0.0))
    assert zero.n_atoms == 1 and zero.values[0] == 0
    assert zero.probs[0] == pytest.approx(1.0, abs=1e-15)
    a = E.add_edge(E.leaf_base_distribution(ASYM), ASYM)
    assert atoms(a) == [(F(-1, 3), F(3, 5)), (F(1, 2), F(2, 5))]
    assert a.mean() == 0


def test_add_edge_rejects_other_pi():
    base = E.leaf_base_distribution(SYM6)
    with pytest.raises(E.DistributionError):
        E.add_edge(base, ASYM)


def test_merge_examples():
    ch = channel_from_theta_delta(0.6, 0.0)
    y = E.add_edge(E.leaf_base_distribution(ch), ch)
    point = E.point_mass(0.5, 0.5)
    same = E.merge(y, point)
    assert np.array_equal(same.values, y.values) and np.array_equal(same.probs, y.probs)
    two = E.add_edge(E.leaf_base_distribution(SYM6), SYM6)
    d = E.merge(two, two)
    assert atoms(d) == [(F(-15, 17), F(17, 50)), (0, F(8, 25)), (F(15, 17), F(17, 50))]
    assert d.second_moment() == F(153, 289)


def test_merge_rejects_mismatch_and_corruption():
    a = E.leaf_base_distribution(SYM6)
    with pytest.raises(E.DistributionError):
        E.merge(a, E.leaf_base_distribution(ASYM))
    bad = E.MagnetizationDistribution(np.array([-2.0, 1.0]), np.array([1 / 3, 2 / 3]), 0.5, 0.5)
    with pytest.raises(E.DistributionError):
        E.merge(bad, bad)


def test_brute_force_examples():
    t = build_regular_tree(2, 1, SYM6)
    d = E.brute_force_distribution(t)
    assert atoms(d) == [(F(-15, 17), F(17, 50)), (0, F(8, 25)), (F(15, 17), F(17, 50))]
    assert E.tv_distance(d) == F(3, 5)
    single = build_regular_tree(2, 0, ASYM)
    assert atoms(E.brute_force_distribution(single)) == atoms(E.leaf_base_distribution(ASYM))
    zero = build_regular_tree(3, 2, channel_from_theta_delta(0, 0))
    assert atoms(E.brute_force_distribution(zero)) == [(0, 1)]


def test_brute_force_cap():
    t = build_regular_tree(3, 3, channel_from_theta_delta(0.5, 0.0))
    with pytest.raises(E.OracleCapError):
        E.brute_force_distribution(t)


def test_root_posterior_examples():
    t = build_regular_tree(2, 1, SYM6)
    assert E.root_posterior(t, ["+", "+"]) == F(16, 17)
    assert E.root_posterior(t, ["+", "-"]) == F(1, 2)
    assert E.root_posterior(t, {1: "-", 2: "+"}) == F(1, 2)
    assert E.root_posterior(build_regular_tree(2, 0, SYM6), "+") == 1
    with pytest.raises(ValueError):
        E.root_posterior(t, ["+"])
    with pytest.raises(ValueError):
        E.root_posterior(t, {1: "+"})


def test_root_posterior_deep_tree_no_underflow():
    # raw likelihood products here are below 1e-308; the normalised pass must stay finite
    from treerecon import montecarlo as M

    t = build_regular_tree(2, 14, channel_from_theta_delta(0.9, 0.02))
    leaves = M.sample_leaves(t, "+", seed=5)
    p = E.root_posterior(t, leaves)
    assert 0.0 < p < 1.0
    x = M.sample_magnetizations(t, 1, seed=5, root_state="+")[0]
    assert (p - float(t.pi_plus)) / float(t.pi_minus) == pytest.approx(x, abs=1e-12)


def test_tv_point_mass_and_base():
    assert E.tv_distance(E.point_mass(0.5, 0.5)) == 0
    assert E.tv_distance(E.leaf_base_distribution(channel_from_theta_delta(0.2, 0.0))) == 1


@pytest.mark.parametrize("arity,depth", [(1, 3), (2, 1), (2, 2), (2, 3), (3, 1), (3, 2)])
@pytest.mark.parametrize("ch", [SYM6, ASYM, channel_from_theta_delta(F(-2, 5), F(1, 20))])
def test_oracle_equivalence_exact(arity, depth, ch):
    if arity ** depth > 16:
        pytest.skip("exact enumeration kept to 16 leaves")
    ev = E.evolve(arity, ch, depth)
    for n in range(depth + 1):
        bf = E.brute_force_distribution(build_regular_tree(arity, n, ch))
        assert atoms(ev[n]) == atoms(bf)


def test_evolve_zero_theta_and_errors():
    ds = E.evolve(3, channel_from_theta_delta(0.0, 0.1), 3)
    for d in ds[1:]:
        assert np.allclose(d.values, [0.0]) and d.probs.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        E.evolve(2, SYM6, -1)
    with pytest.raises(E.AtomExplosionError):
        E.evolve(2, channel_from_theta_delta(0.6, 0.01), 6, max_atoms=1000)


def test_symmetric_recursion_along_exact_run():
    ds = E.evolve(2, SYM6, 4)
    for a, b in zip(ds, ds[1:]):
        m_prev, m = a.second_moment(), b.second_moment()
        assert m <= F(72, 100) * m_prev - F(1296, 10000) * m_prev ** 2


def test_tilt_densities_and_add_edge_moment_law():
    for ch in (SYM6, ASYM, channel_from_theta_delta(F(-1, 3), F(1, 30))):
        for d in E.evolve(2, ch, 3):
            m = d.second_moment()
            assert E.tilt(d, "+").mean() == d.pi_ratio * m
            assert E.tilt(d, "-").mean() == -m
            assert E.add_edge(d, ch).second_moment() == ch.theta ** 2 * m


def test_child_magnetization_moments():
    rng = np.random.default_rng(8)
    for _ in range(10):
        t = random_tree(rng, max_depth=2, pi_gap=0.15)
        y = E.brute_force_distribution(t)
        theta = float(rng.uniform(-0.9, 0.9))
        ch = channel_from_theta_delta(theta, 0.15 * (1 - theta))
        r = y.pi_ratio
        w_plus = (1 - ch.eps_plus) * (1 + r * y.values) + ch.eps_plus * (1 - y.values)
        w_minus = (1 - ch.eps_minus) * (1 + r * y.values) + ch.eps_minus * (1 - y.values)
        p = y.probs
        e_plus = np.sum(p * (1 + r * y.values) * y.values)
        e_minus = np.sum(p * (1 - y.values) * y.values)
        assert np.sum(p * w_plus * y.values) == pytest.approx(theta * e_plus, abs=1e-10)
        assert np.sum(p * w_minus * y.values) == pytest.approx(theta * e_minus, abs=1e-10)
        m = np.sum(p * y.values ** 2)
        m_plus = np.sum(p * (1 + r * y.values) * y.values ** 2)
        m_minus = np.sum(p * (1 - y.values) * y.values ** 2)
        assert np.sum(p * w_plus * y.values ** 2) == pytest.approx((1 - theta) * m + theta * m_plus, abs=1e-10)
        assert np.sum(p * w_minus * y.values ** 2) == pytest.approx((1 - theta) * m + theta * m_minus, abs=1e-10)


def test_merge_matches_enumeration_on_random_trees():
    rng = np.random.default_rng(21)
    for _ in range(25):
        gap = float(rng.uniform(0, 0.15))
        t1 = random_tree(rng, max_depth=2, max_leaves=6, pi_gap=gap)
        t2 = random_tree(rng, max_depth=2, max_leaves=6, pi_gap=gap)
        th1, th2 = rng.choice([-0.7, -0.2, 0.4, 0.8], size=2)
        c1 = channel_from_theta_delta(th1, gap * (1 - th1))
        c2 = channel_from_theta_delta(th2, gap * (1 - th2))
        joined = graft([(t1, c1), (t2, c2)], c1)
        y = E.add_edge(E.brute_force_distribution(t1), c1)
        z = E.add_edge(E.brute_force_distribution(t2), c2)
        merged = E.merge(y, z)
        direct = E.brute_force_distribution(joined)
        assert merged.n_atoms == direct.n_atoms
        assert np.allclose(merged.values, direct.values, atol=1e-10)
        assert np.allclose(merged.probs, direct.probs, atol=1e-10)
        merged.check(1e-10)


def test_tv_matches_direct_definition():
    rng = np.random.default_rng(3)
    for _ in range(15):
        t = random_tree(rng, max_depth=3)
        d = E.brute_force_distribution(t)
        assert float(E.tv_distance(d)) == pytest.approx(float(E.tv_distance_direct(t)), abs=1e-10)
    t = build_regular_tree(2, 2, ASYM)
    assert E.tv_distance(E.brute_force_distribution(t)) == E.tv_distance_direct(t)


def test_tv_monotone_along_levels():
    for ch in (channel_from_theta_delta(0.6, 0.0), channel_from_theta_delta(0.8, 0.05)):
        tv = [float(E.tv_distance(d)) for d in E.evolve(2, ch, 12, binning=E.BinningPolicy())]
        assert all(b <= a + 1e-9 for a, b in zip(tv, tv[1:]))


@pytest.mark.parametrize("ch", [channel_from_theta_delta(0.6, 0.0), channel_from_theta_delta(2 ** -0.5, 0.015),
                                channel_from_theta_delta(0.5, 0.1), channel_from_theta_delta(-0.4, 0.05)])
@pytest.mark.parametrize("policy", [E.BinningPolicy(max_atoms=500, pair_limit=1000),
                                    E.BinningPolicy(bin_width=1e-3),
                                    E.BinningPolicy(max_atoms=5000, pair_limit=10)])
def test_binned_evolution_within_reported_error(ch, policy):
    exact = E.evolve(2, ch, 5)
    binned = E.evolve(2, ch, 5, binning=policy)
    for a, b in zip(exact, binned):
        gap = abs(float(a.second_moment()) - float(b.second_moment()))
        assert gap <= b.moment_error + 1e-14
        assert abs(float(b.mean())) <= 1e-12
        assert b.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_lattice_keeps_atom_cap_and_invariants():
    ds = E.evolve(2, channel_from_theta_delta(0.8, 0.02), 14, binning=E.BinningPolicy(max_atoms=20_000))
    for d in ds:
        assert d.n_atoms <= 20_000
        d.check(1e-11)


def test_consolidate_preserves_mass_and_mean():
    rng = np.random.default_rng(0)
    v = np.sort(rng.uniform(-0.5, 0.5, 1000))
    p = rng.uniform(size=1000)
    p /= p.sum()
    v -= np.sum(p * v)
    d = E.MagnetizationDistribution(v, p, 0.5, 0.5)
    c = E.consolidate(d, 0.01)
    assert c.n_atoms <= 101
    assert c.total_mass() == pytest.approx(1.0, abs=1e-14)
    assert c.mean() == pytest.approx(0.0, abs=1e-15)
    assert d.second_moment() - c.second_moment() == pytest.approx(c.moment_error, abs=1e-15)


def test_export_formats(tmp_path):
    import csv
    import json

    d = E.evolve(2, SYM6, 1)[1]
    path = tmp_path / "d.csv"
    with open(path, "w", newline="") as fh:
        d.write_csv(fh)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["value", "prob"] and len(rows) == 4
    js = d.to_json_dict()
    assert set(js) >= {"atoms", "pi_plus", "pi_minus", "moments"}
    assert set(js["moments"]) == {"m", "m_plus", "m_minus"}
    json.dumps(js)


@st.composite
def small_channel(draw):
    theta = draw(st.integers(-8, 8)) / 10
    top = int(round((1 - abs(theta)) * 20))
    delta = draw(st.integers(0, max(top - 1, 0))) / 20
    return channel_from_theta_delta(F(theta).limit_denominator(10), F(delta).limit_denominator(20))


@settings(max_examples=25, deadline=None)
@given(small_channel(), st.integers(1, 3), st.integers(0, 2))
def test_invariants_hold_exactly(ch, arity, depth):
    for d in E.evolve(arity, ch, depth):
        assert d.total_mass() == 1
        assert d.mean() == 0
        assert all(-1 / d.pi_ratio <= v <= 1 for v in d.values)
        assert all(1 + d.pi_ratio * v >= 0 and 1 - v >= 0 for v in d.values)
