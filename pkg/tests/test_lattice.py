from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrolattice import LatticeError, NodeField, build_lattice, node_probabilities, propagate
from hydrolattice.lattice import layer_size, total_nodes


def test_smallest_lattice():
    lat = build_lattice(2, 1)
    assert lat.size(0) == 1
    assert lat.size(1) == 2
    assert lat.n_nodes == 3


def test_last_layer_k15_T48():
    assert build_lattice(15, 48).size(48) == 673


def test_total_nodes_toy():
    assert build_lattice(4, 6).n_nodes == 70
    assert total_nodes(4, 6) == 70


@pytest.mark.parametrize("k,T", [(0, 3), (1, 3), (2, 0), (3, -1), (2.5, 3)])
def test_invalid_parameters(k, T):
    with pytest.raises(LatticeError):
        build_lattice(k, T)


def test_probabilities_k2():
    lat = build_lattice(2, 2)
    np.testing.assert_allclose(lat.prob(1), [0.5, 0.5])
    np.testing.assert_allclose(lat.prob(2), [0.25, 0.5, 0.25])


def _brute_force_probabilities(k, T):
    """Count the k**T equiprobable paths ending at each node."""
    counts = [dict() for _ in range(T + 1)]
    for path in product(range(k), repeat=T):
        j = 0
        counts[0][0] = counts[0].get(0, 0) + 1
        for t, s in enumerate(path, start=1):
            j += s
            counts[t][j] = counts[t].get(j, 0) + 1
    out = []
    for t in range(T + 1):
        n = (k - 1) * t + 1
        # every path visits layer t once, so normalise by the path count
        out.append([Fraction(counts[t].get(j, 0), k ** T) for j in range(n)])
    return out


@pytest.mark.parametrize("k,T", [(2, 4), (3, 3), (4, 2), (5, 2)])
def test_probabilities_match_path_counting(k, T):
    lat = build_lattice(k, T)
    ref = _brute_force_probabilities(k, T)
    for t in range(T + 1):
        np.testing.assert_allclose(lat.prob(t), [float(p) for p in ref[t]], rtol=1e-14)


def test_elementary_path_probability():
    assert build_lattice(3, 4).path_probability() == pytest.approx(3.0 ** -4)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(1, 25))
def test_layer_structure(k, T):
    lat = build_lattice(k, T)
    assert lat.n_nodes == sum(layer_size(k, t) for t in range(T + 1)) == total_nodes(k, T)
    for t in range(T + 1):
        assert abs(lat.prob(t).sum() - 1.0) < 1e-12
        assert np.all(lat.prob(t) > 0)
    # node ids enumerate layers in order
    for gid in (0, lat.n_nodes // 2, lat.n_nodes - 1):
        assert lat.node_id(*lat.node(gid)) == gid


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 6), st.data())
def test_children_and_parents_are_consistent(k, T, data):
    lat = build_lattice(k, T)
    t = data.draw(st.integers(0, T - 1))
    j = data.draw(st.integers(0, lat.size(t) - 1))
    kids = lat.children(t, j)
    assert kids == [(t + 1, j + s) for s in range(k)]
    for c in kids:
        assert (t, j) in lat.parents(*c)
    # recursion P(c) = sum over parents P(n) / k
    c = data.draw(st.integers(0, lat.size(t + 1) - 1))
    par = lat.parents(t + 1, c)
    assert lat.prob(t + 1)[c] == pytest.approx(sum(lat.prob(t)[jj] for _, jj in par) / k)


def test_edge_weights_sum_to_one_per_child():
    lat = build_lattice(4, 5)
    for t in range(5):
        parent, child, w = lat.edges(t)
        assert parent.size == lat.size(t) * 4
        np.testing.assert_allclose(np.bincount(child, weights=w), 1.0)


def test_propagate_constant_is_fixed_point():
    lat = build_lattice(3, 3)
    out = propagate(lat, 2, np.full(lat.size(2), 7.25))
    np.testing.assert_allclose(out, 7.25)


def test_propagate_level_equation_single_parent():
    lat = build_lattice(2, 1)
    out = propagate(lat, 0, [41.5], g=lambda y, u, i: y - u + i, parent_aux=[[0.5]], child_aux=[[0.0, 0.0]])
    np.testing.assert_allclose(out, [41.0, 41.0])


def test_propagate_middle_node_average():
    lat = build_lattice(2, 2)
    out = propagate(lat, 1, [10.0, 20.0])
    assert out[1] == pytest.approx(15.0)
    assert out[0] == 10.0 and out[2] == 20.0


def test_propagate_vector_field_and_conditional_mean():
    lat = build_lattice(3, 3)
    rng = np.random.default_rng(0)
    y = rng.standard_normal((lat.size(2), 2))
    out = propagate(lat, 2, y)
    assert out.shape == (lat.size(3), 2)
    # propagating by averaging preserves the probability-weighted layer mean
    np.testing.assert_allclose(lat.prob(3) @ out, lat.prob(2) @ y, rtol=1e-12)
    # and child_mean of a child field is its conditional expectation
    x = rng.standard_normal(lat.size(3))
    ref = [np.mean([x[c] for _, c in lat.children(2, j)]) for j in range(lat.size(2))]
    np.testing.assert_allclose(lat.child_mean(2, x), ref)


def test_propagate_shape_errors():
    lat = build_lattice(2, 2)
    with pytest.raises(LatticeError):
        propagate(lat, 1, [1.0, 2.0, 3.0])
    with pytest.raises(LatticeError):
        propagate(lat, 1, [1.0, 2.0], g=lambda y, a: y + a, child_aux=[[1.0]])


def test_node_field_checks_shapes():
    lat = build_lattice(2, 2)
    with pytest.raises(LatticeError):
        NodeField(lat, 0, [np.zeros(1), np.zeros(3)])
    f = node_probabilities(lat)
    assert f.times() == range(0, 3)
    assert f.mean(2) == pytest.approx(0.375)
    with pytest.raises(LatticeError):
        f[3]
    with pytest.raises(LatticeError):
        f[1] = np.zeros(3)


def test_summary_csv(tmp_path):
    lat = build_lattice(3, 2)
    lat.to_csv(tmp_path / "lat.csv")
    lines = (tmp_path / "lat.csv").read_text().splitlines()
    assert lines[0] == "t,nodes,prob_sum,prob_min,prob_max"
    assert lines[3].startswith("2,5,")
