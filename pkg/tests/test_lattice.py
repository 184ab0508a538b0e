import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_space_time, paths, row_weights as oracle_row_weights
from snlab.errors import DomainError, ShapeError, SizeError
from snlab.grid import SpatialGrid
from snlab.lattice import (
    AdaptedField,
    ScalarProcess,
    build_tree,
    conditional_expectation,
    martingale_integrand,
    row_weights,
    space_time_inner,
    terminal_inner,
)


def test_tree_sizes_and_rows():
    t = build_tree(1.0, 4)
    assert t.n_nodes == 31 and t.n_running == 15
    assert t.rows(0) == slice(0, 1)
    assert t.rows(3) == slice(7, 15)
    assert np.allclose(t.times(), [0, 0.25, 0.5, 0.75, 1.0])
    assert t.row_levels()[:8].tolist() == [0, 1, 1, 2, 2, 2, 2, 3]


@pytest.mark.parametrize("K", [0, 25, 2.5])
def test_step_count_bounds(K):
    with pytest.raises(SizeError):
        build_tree(1.0, K)


@pytest.mark.parametrize("T", [0.0, -1.0, np.inf])
def test_horizon_must_be_positive(T):
    with pytest.raises(DomainError):
        build_tree(T, 3)


def test_increments_alternate():
    t = build_tree(0.5, 5)
    inc = t.increments(2)
    assert inc.shape == (8,)
    assert np.all(inc[0::2] == t.sqdt) and np.all(inc[1::2] == -t.sqdt)


def test_children_decomposition_exact(rng):
    tree = build_tree(0.3, 6)
    X = rng.standard_normal((2**4, 7))
    m = conditional_expectation(X)
    Z = martingale_integrand(X, tree)
    dW = tree.increments(3)[:, None]
    rebuilt = np.repeat(m, 2, axis=0) + np.repeat(Z, 2, axis=0) * dW
    assert np.allclose(rebuilt, X, rtol=0, atol=1e-14)


def test_conditional_expectation_rejects_non_level():
    with pytest.raises(ShapeError):
        conditional_expectation(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        conditional_expectation(np.zeros((1, 2)))


def test_martingale_integrand_level_past_tree():
    with pytest.raises(ShapeError):
        martingale_integrand(np.zeros((16, 2)), build_tree(1.0, 3))


def test_space_time_inner_matches_path_enumeration(rng):
    K, N, T = 4, 3, 0.4
    tree, sp = build_tree(T, K), SpatialGrid(1.0, N)
    X = AdaptedField(tree, sp, rng.standard_normal((tree.n_nodes, N)))
    Y = AdaptedField(tree, sp, rng.standard_normal((tree.n_nodes, N)))
    ref = brute_space_time(K, T, sp.h, X.data, Y.data)
    assert space_time_inner(X, Y) == pytest.approx(ref, rel=1e-13)


def test_weighted_inner_uses_rho_squared(rng):
    tree, sp = build_tree(0.2, 3), SpatialGrid(1.0, 4)
    X = AdaptedField(tree, sp, rng.standard_normal((tree.n_nodes, 4)))
    rho = ScalarProcess(tree, np.full(tree.n_nodes, 3.0))
    assert space_time_inner(X, X, rho) == pytest.approx(9 * space_time_inner(X, X), rel=1e-14)
    with pytest.raises(DomainError):
        space_time_inner(X, X, ScalarProcess(tree, np.zeros(tree.n_nodes)))


def test_row_weights_match_oracle():
    tree = build_tree(0.7, 5)
    assert np.allclose(row_weights(tree, 0.1), oracle_row_weights(5, 0.7, 0.1), rtol=1e-15)


def test_terminal_inner_is_path_average(rng):
    tree = build_tree(1.0, 3)
    a = rng.standard_normal((8, 2))
    ref = np.mean([0.5 * a[nodes[-1] - 7] @ a[nodes[-1] - 7] for _, nodes in paths(3)])
    assert terminal_inner(tree, 0.5, a, a) == pytest.approx(ref, rel=1e-14)


def test_field_shape_and_grid_checks():
    tree, sp = build_tree(1.0, 2), SpatialGrid(1.0, 3)
    with pytest.raises(ShapeError):
        AdaptedField(tree, sp, np.zeros((6, 3)))
    a = AdaptedField(tree, sp)
    b = AdaptedField(build_tree(1.0, 2), SpatialGrid(2.0, 3))
    with pytest.raises(ShapeError):
        a + b
    assert np.array_equal((2 * (a + 1.0)).data, np.full((7, 3), 2.0))


def test_scalar_process_from_levels():
    tree = build_tree(1.0, 2)
    sp = ScalarProcess.from_levels(tree, [1.0, 2.0, 3.0])
    assert sp.values.tolist() == [1, 2, 2, 3, 3, 3, 3]
    with pytest.raises(ShapeError):
        ScalarProcess(tree, np.ones(3))


@given(st.integers(1, 7), st.floats(0.01, 5.0))
def test_martingale_property_of_brownian_path(K, T):
    # W on the lattice: its conditional expectation is the parent value
    tree = build_tree(T, K)
    W = np.zeros(tree.n_nodes)
    for k in range(K):
        W[tree.rows(k + 1)] = np.repeat(W[tree.rows(k)], 2) + tree.increments(k)
    for k in range(K):
        assert np.allclose(conditional_expectation(W[tree.rows(k + 1)][:, None])[:, 0], W[tree.rows(k)], atol=1e-12)
        # integrand of W itself is 1
        Z = martingale_integrand(W[tree.rows(k + 1)][:, None], tree)
        assert np.allclose(Z, 1.0)


@given(st.integers(1, 6))
def test_row_weights_sum_to_horizon(K):
    tree = build_tree(0.9, K)
    assert row_weights(tree, 1.0).sum() == pytest.approx(0.9, rel=1e-13)
