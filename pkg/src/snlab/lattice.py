"""Binomial Brownian lattice and adapted processes on it.

The lattice has K steps of size dt = T/K.  Level k holds 2**k equally likely
nodes and node (k, j) branches to (k+1, 2j) on an up move (+sqrt(dt)) and to
(k+1, 2j+1) on a down move (-sqrt(dt)).  All nodes are stored level by level
in one array, so level k occupies rows 2**k - 1 .. 2**(k+1) - 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, ShapeError, SizeError

MAX_STEPS = 24


@dataclass(frozen=True)
class TreeGrid:
    T: float
    K: int

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def sqdt(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def n_nodes(self) -> int:
        return 2 ** (self.K + 1) - 1

    @property
    def n_running(self) -> int:
        """Nodes on levels 0..K-1, the support of dt-integrals."""
        return 2**self.K - 1

    def rows(self, k: int) -> slice:
        return slice(2**k - 1, 2 ** (k + 1) - 1)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.K + 1)

    def increments(self, k: int) -> np.ndarray:
        """Brownian increment dW_k seen from each node of level k+1."""
        out = np.empty(2 ** (k + 1))
        out[0::2] = self.sqdt
        out[1::2] = -self.sqdt
        return out

    def node_probabilities(self, k: int) -> np.ndarray:
        return np.full(2**k, 2.0**-k)

    def row_levels(self) -> np.ndarray:
        """Level index of each stored row."""
        return _row_levels(self.K)


def build_tree(T: float, K: int) -> TreeGrid:
    if not np.isfinite(T) or T <= 0:
        raise DomainError(f"horizon must be positive, got T={T}")
    if int(K) != K or not 1 <= K <= MAX_STEPS:
        raise SizeError(f"steps must satisfy 1 <= K <= {MAX_STEPS}, got K={K}")
    return TreeGrid(float(T), int(K))


def _level_of(n_rows: int) -> int:
    k = int(np.log2(n_rows)) if n_rows > 0 else -1
    if k < 0 or 2**k != n_rows:
        raise ShapeError(f"{n_rows} rows is not a lattice level")
    return k


def conditional_expectation(X: np.ndarray) -> np.ndarray:
    """Average over the two children: level k+1 values -> level k values."""
    X = np.asarray(X, dtype=float)
    k1 = _level_of(X.shape[0])
    if k1 < 1:
        raise ShapeError("need a level k+1 >= 1")
    return 0.5 * (X[0::2] + X[1::2])


def martingale_integrand(X: np.ndarray, tree: TreeGrid) -> np.ndarray:
    """Z with X(child) = E[X | F_k] + Z * dW_k exactly on both children."""
    X = np.asarray(X, dtype=float)
    k1 = _level_of(X.shape[0])
    if k1 < 1 or k1 > tree.K:
        raise ShapeError(f"level {k1} is not a child level of a K={tree.K} tree")
    return (X[0::2] - X[1::2]) / (2.0 * tree.sqdt)


class AdaptedField:
    """One spatial vector per lattice node.

    ``data`` has shape (2**(K+1) - 1, N).  Running processes (controls,
    martingale integrands) only use levels 0..K-1 and keep level K at zero.
    """

    __slots__ = ("tree", "space", "data")

    def __init__(self, tree: TreeGrid, space, data: np.ndarray | None = None):
        self.tree = tree
        self.space = space
        if data is None:
            data = np.zeros((tree.n_nodes, space.N))
        data = np.asarray(data, dtype=float)
        if data.shape != (tree.n_nodes, space.N):
            raise ShapeError(f"field shape {data.shape} != {(tree.n_nodes, space.N)}")
        self.data = data

    @classmethod
    def zeros(cls, tree, space):
        return cls(tree, space)

    def level(self, k: int) -> np.ndarray:
        return self.data[self.tree.rows(k)]

    def set_level(self, k: int, values) -> None:
        self.data[self.tree.rows(k)] = values

    @property
    def running(self) -> np.ndarray:
        return self.data[: self.tree.n_running]

    @property
    def terminal(self) -> np.ndarray:
        return self.data[self.tree.n_running :]

    def copy(self) -> "AdaptedField":
        return AdaptedField(self.tree, self.space, self.data.copy())

    def masked(self, mask) -> "AdaptedField":
        return AdaptedField(self.tree, self.space, self.data * np.asarray(mask, dtype=float))

    def running_only(self) -> "AdaptedField":
        out = self.copy()
        out.data[self.tree.n_running :] = 0.0
        return out

    def _check(self, other):
        if not isinstance(other, AdaptedField):
            return
        if other.tree != self.tree or other.space != self.space:
            raise ShapeError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        o = other.data if isinstance(other, AdaptedField) else other
        return AdaptedField(self.tree, self.space, self.data + o)

    def __sub__(self, other):
        self._check(other)
        o = other.data if isinstance(other, AdaptedField) else other
        return AdaptedField(self.tree, self.space, self.data - o)

    def __mul__(self, c):
        return AdaptedField(self.tree, self.space, self.data * c)

    __rmul__ = __mul__

    def __neg__(self):
        return AdaptedField(self.tree, self.space, -self.data)

    def __repr__(self):
        return f"AdaptedField(K={self.tree.K}, N={self.space.N})"


class ScalarProcess:
    """One real number per node, stored like AdaptedField rows."""

    __slots__ = ("tree", "values")

    def __init__(self, tree: TreeGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (tree.n_nodes,):
            raise ShapeError(f"scalar process needs {tree.n_nodes} values, got {values.shape}")
        self.tree = tree
        self.values = values

    @classmethod
    def from_levels(cls, tree: TreeGrid, per_level) -> "ScalarProcess":
        per_level = np.asarray(per_level, dtype=float)
        return cls(tree, per_level[tree.row_levels()])


def space_time_inner(X: AdaptedField, Y: AdaptedField, weight: ScalarProcess | None = None) -> float:
    """E int_0^T rho^2 <X, Y>_h dt with the left-endpoint rule over levels 0..K-1."""
    if X.tree != Y.tree or X.space != Y.space:
        raise ShapeError("fields live on different grids")
    return running_inner(X.tree, X.space.h, X.running, Y.running, weight)


def running_inner(tree, h, Xr, Yr, weight=None) -> float:
    w = row_weights(tree, h)
    if weight is not None:
        if weight.tree != tree:
            raise ShapeError("weight lives on a different tree")
        rv = weight.values[: tree.n_running]
        if np.any(~(rv > 0)):
            raise DomainError("weight must be strictly positive")
        w = w * rv**2
    return float(w @ np.einsum("ij,ij->i", Xr, Yr))


def row_weights(tree: TreeGrid, h: float) -> np.ndarray:
    """dt * 2**-k * h for each running row."""
    return _row_weights(tree.T, tree.K, float(h))


@lru_cache(maxsize=None)
def _row_levels(K):
    out = np.concatenate([np.full(2**k, k) for k in range(K + 1)])
    out.flags.writeable = False
    return out


@lru_cache(maxsize=64)
def _row_weights(T, K, h):
    lv = _row_levels(K)[: 2**K - 1]
    out = (T / K) * h * 2.0 ** (-lv.astype(float))
    out.flags.writeable = False
    return out


def terminal_inner(tree: TreeGrid, h: float, a: np.ndarray, b: np.ndarray) -> float:
    """E <a, b>_h for level-K node values."""
    return float(h * 2.0**-tree.K * np.einsum("ij,ij->", a, b))


def level_inner(k: int, h: float, a: np.ndarray, b: np.ndarray) -> float:
    """E <a, b>_h for level-k node values."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    return float(h * 2.0**-k * np.einsum("ij,ij->", a, b))
