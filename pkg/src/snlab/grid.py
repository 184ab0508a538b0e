"""Uniform 1-D grid on (0, L) with homogeneous Dirichlet boundary."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, NumericalError, ShapeError


@dataclass(frozen=True)
class SpatialGrid:
    L: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise DomainError(f"need at least 3 interior points, got N={self.N}")
        if not self.L > 0:
            raise DomainError(f"interval length must be positive, got L={self.L}")

    @property
    def h(self) -> float:
        return self.L / (self.N + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(1, self.N + 1)

    def inner(self, u, v) -> float:
        return float(self.h * np.dot(u, v))

    def norm(self, u) -> float:
        return float(np.sqrt(self.inner(u, u)))

    def first_eigenvalue(self) -> float:
        """Smallest eigenvalue of -Delta_h."""
        return float((2.0 / self.h**2) * (1.0 - np.cos(np.pi * self.h / self.L)))

    def eigenvector(self, n: int = 1) -> np.ndarray:
        return np.sin(n * np.pi * self.x / self.L)

    def eigenvalue(self, n: int = 1) -> float:
        return float((2.0 / self.h**2) * (1.0 - np.cos(n * np.pi * self.h / self.L)))


def make_mask(grid: SpatialGrid, ranges) -> np.ndarray:
    """0/1 indicator from inclusive 1-based index ranges [(lo, hi), ...].

    An empty list gives the empty mask.
    """
    m = np.zeros(grid.N)
    if ranges and np.ndim(ranges) == 1:
        ranges = [ranges]
    for lo, hi in ranges or []:
        lo, hi = int(lo), int(hi)
        if not 1 <= lo <= hi <= grid.N:
            raise DomainError(f"index range [{lo}, {hi}] outside [1, {grid.N}]")
        m[lo - 1 : hi] = 1.0
    return m


def whole_mask(grid: SpatialGrid) -> np.ndarray:
    return np.ones(grid.N)


def laplacian_apply(grid: SpatialGrid, v) -> np.ndarray:
    """Second difference with zero boundary values; acts on the last axis."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != grid.N:
        raise ShapeError(f"vector length {v.shape[-1]} != N={grid.N}")
    out = -2.0 * v
    out[..., 1:] += v[..., :-1]
    out[..., :-1] += v[..., 1:]
    return out / grid.h**2


def laplacian_matrix(grid: SpatialGrid) -> np.ndarray:
    return laplacian_apply(grid, np.eye(grid.N))


def _banded(grid, c, sign, zeroth):
    s = 1.0 if sign == "-" else -1.0
    r = s * c / grid.h**2
    ab = np.zeros((3, grid.N))
    ab[0, 1:] = -r
    ab[1, :] = 1.0 + 2.0 * r + zeroth
    ab[2, :-1] = -r
    return ab


def solve_shifted(grid: SpatialGrid, c: float, sign: str, zeroth, rhs) -> np.ndarray:
    """Solve (I - c*Delta_h + diag(zeroth)) w = rhs (sign '-') or with +c*Delta_h (sign '+').

    ``rhs`` may be a single vector or a stack of vectors along the first axis.
    """
    if sign not in ("-", "+"):
        raise ValueError("sign must be '-' or '+'")
    if c < 0:
        raise DomainError("shift coefficient must be nonnegative")
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[-1] != grid.N:
        raise ShapeError(f"rhs length {rhs.shape[-1]} != N={grid.N}")
    zeroth = np.broadcast_to(np.asarray(zeroth, dtype=float), (grid.N,))
    if sign == "-" and np.max(np.abs(zeroth), initial=0.0) >= 1.0:
        raise NumericalError(
            "zeroth-order term violates the stability guard dt*|a1| < 1",
            max_abs_zeroth=float(np.max(np.abs(zeroth))),
        )
    ab = _banded(grid, c, sign, zeroth)
    try:
        with np.errstate(all="raise"):
            w = solve_banded((1, 1), ab, rhs.T, check_finite=True)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise NumericalError(f"singular shifted system: {exc}", c=c, sign=sign) from exc
    return w.T


class HeatResolvent:
    """Cached (I - dt*Delta_h)^{-1}, applied to stacks of vectors.

    The matrix is symmetric positive definite and small, so the dense inverse
    is formed once per (grid, dt) and applied by a matrix product.
    """

    def __init__(self, grid: SpatialGrid, dt: float):
        self.grid = grid
        self.dt = dt
        self.matrix = _resolvent(grid.L, grid.N, float(dt))

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        return rhs @ self.matrix


@lru_cache(maxsize=32)
def _resolvent(L, N, dt):
    g = SpatialGrid(L, N)
    inv = solve_shifted(g, dt, "-", 0.0, np.eye(N))
    inv = 0.5 * (inv + inv.T)
    inv.flags.writeable = False
    return inv
