import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import lap
from snlab.errors import DomainError, NumericalError, ShapeError
from snlab.grid import HeatResolvent, SpatialGrid, laplacian_apply, laplacian_matrix, make_mask, solve_shifted, whole_mask


def test_grid_basics():
    g = SpatialGrid(1.0, 5)
    assert g.h == pytest.approx(1 / 6)
    assert np.allclose(g.x, np.arange(1, 6) / 6)
    with pytest.raises(DomainError):
        SpatialGrid(1.0, 2)
    with pytest.raises(DomainError):
        SpatialGrid(0.0, 5)


def test_laplacian_matches_oracle():
    g = SpatialGrid(2.0, 7)
    assert np.allclose(laplacian_matrix(g), lap(7, 2.0), rtol=1e-14)


def test_first_eigenvalue_frozen():
    # oracle: smallest eigenvalue of -lap(N) by dense eigvalsh
    assert SpatialGrid(1.0, 5).first_eigenvalue() == pytest.approx(9.646170927520425, rel=1e-13)
    assert SpatialGrid(1.0, 21).first_eigenvalue() == pytest.approx(9.852844259257381, rel=1e-13)


def test_eigenpairs():
    g = SpatialGrid(1.0, 9)
    for n in (1, 3):
        v = g.eigenvector(n)
        assert np.allclose(-laplacian_apply(g, v), g.eigenvalue(n) * v, rtol=1e-12, atol=1e-9)


def test_masks():
    g = SpatialGrid(1.0, 6)
    assert make_mask(g, (2, 3)).tolist() == [0, 1, 1, 0, 0, 0]
    assert make_mask(g, [(1, 1), (6, 6)]).tolist() == [1, 0, 0, 0, 0, 1]
    assert not make_mask(g, []).any()
    assert whole_mask(g).sum() == 6
    with pytest.raises(DomainError):
        make_mask(g, (0, 2))
    with pytest.raises(DomainError):
        make_mask(g, (3, 7))


def test_shifted_solve_matches_dense(rng):
    g = SpatialGrid(1.0, 8)
    rhs = rng.standard_normal((3, 8))
    z = rng.uniform(-0.5, 0.5, 8)
    for sign, s in (("-", 1.0), ("+", -1.0)):
        A = np.eye(8) - s * 0.01 * lap(8) + np.diag(z)
        w = solve_shifted(g, 0.01, sign, z, rhs)
        assert np.allclose(w, np.linalg.solve(A, rhs.T).T, rtol=1e-12)


def test_shifted_solve_guards():
    g = SpatialGrid(1.0, 5)
    with pytest.raises(NumericalError):
        solve_shifted(g, 0.1, "-", 1.0, np.ones(5))
    with pytest.raises(ShapeError):
        solve_shifted(g, 0.1, "-", 0.0, np.ones(4))
    with pytest.raises(DomainError):
        solve_shifted(g, -0.1, "-", 0.0, np.ones(5))


def test_resolvent_is_inverse(rng):
    g = SpatialGrid(1.0, 11)
    R = HeatResolvent(g, 0.03)
    v = rng.standard_normal((4, 11))
    assert np.allclose(R(v) @ (np.eye(11) - 0.03 * lap(11)).T, v, atol=1e-12)


@given(st.integers(3, 30), st.floats(1e-4, 1.0))
def test_resolvent_contracts(N, dt):
    g = SpatialGrid(1.0, N)
    M = HeatResolvent(g, dt).matrix
    assert np.allclose(M, M.T)
    ev = np.linalg.eigvalsh(M)
    assert ev.min() > 0 and ev.max() < 1


@given(st.integers(3, 25))
def test_laplacian_negative_definite(N):
    g = SpatialGrid(1.0, N)
    ev = np.linalg.eigvalsh(laplacian_matrix(g))
    assert ev.max() == pytest.approx(-g.first_eigenvalue(), rel=1e-10)
