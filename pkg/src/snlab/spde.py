"""Semi-implicit stepping of linear stochastic heat equations on the lattice.

Forward equation  dy = [Delta y + a1 y + f] dt + [a2 y + g] dW,  y(0) = y0:

    y_{k+1} = R [ (1 + dt a1) y_k + dt f_k + dW_k (a2 y_k + g_k) ],   R = (I - dt Delta_h)^{-1}.

Backward equation  dy = [-Delta y + a1 y + a2 Y + f] dt + [Y + g] dW,  y(T) = yT.
Its stencil is the transpose of the forward one (with coefficients -a1, -a2),
which makes the discrete Ito duality exact:

    p_k  = R E_k[y_{k+1}]                    (implicit stage)
    Yh_k = R Z_k(y_{k+1}),   Y_k = Yh_k - g_k
    y_k  = (1 - dt a1) p_k - dt (a2 Y_k + f_k).

For a forward solution y (coefficients a1, a2) and a backward solution phi
(coefficients -a1, -a2) one has, with <.,.> the space-time inner product,

    E<y_K, phi_K> - E<y_0, phi_0>
        = <f, p^phi> + <g, Y^phi + g^phi> + <y, f^phi + a2 g^phi>.

So forward drift sources pair with the implicit stage p of the backward
solution, and every dt-integral of a backward state uses p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError
from .grid import HeatResolvent, SpatialGrid
from .lattice import AdaptedField, TreeGrid


class Coefficient:
    """Bounded zeroth-order coefficient: constant, spatial, per level or per node."""

    __slots__ = ("value", "per_node")

    def __init__(self, value):
        if isinstance(value, Coefficient):
            self.value, self.per_node = value.value, value.per_node
        elif isinstance(value, AdaptedField):
            self.value, self.per_node = value.data, True
        else:
            self.value, self.per_node = np.asarray(value, dtype=float), False

    def at(self, tree: TreeGrid, k: int):
        if self.per_node:
            return self.value[tree.rows(k)]
        return self.value

    def running(self, tree: TreeGrid):
        """Values broadcastable against running rows."""
        if self.per_node:
            return self.value[: tree.n_running]
        return self.value

    def sup(self) -> float:
        return float(np.max(np.abs(self.value), initial=0.0))

    def is_zero(self) -> bool:
        return not np.any(self.value)

    def __neg__(self):
        c = Coefficient(0.0)
        c.value, c.per_node = -self.value, self.per_node
        return c


def per_level_coefficient(tree: TreeGrid, space: SpatialGrid, table) -> Coefficient:
    """Time-dependent coefficient from a (K, N) or (K,) table indexed by level."""
    table = np.asarray(table, dtype=float)
    if table.ndim == 1:
        table = np.repeat(table[:, None], space.N, axis=1)
    if table.shape != (tree.K, space.N):
        raise ShapeError(f"per-level table must have shape {(tree.K, space.N)}")
    lv = tree.row_levels()
    rows = np.vstack([table, np.zeros((1, space.N))])[lv]
    return Coefficient(AdaptedField(tree, space, rows))


def _guard(tree, a1):
    if tree.dt * a1.sup() >= 1.0:
        raise NumericalError(
            "stability guard dt*|a1| < 1 violated", dt=tree.dt, sup_a1=a1.sup()
        )


def _data(field, tree, space):
    if field is None:
        return None
    if isinstance(field, AdaptedField):
        if field.tree != tree or field.space != space:
            raise ShapeError("source lives on a different grid")
        return field.data
    arr = np.asarray(field, dtype=float)
    if arr.shape != (tree.n_nodes, space.N):
        raise ShapeError(f"source shape {arr.shape} != {(tree.n_nodes, space.N)}")
    return arr


def forward_solve(tree, space, a1, a2, y0=None, f=None, g=None) -> AdaptedField:
    a1, a2 = Coefficient(a1), Coefficient(a2)
    _guard(tree, a1)
    f, g = _data(f, tree, space), _data(g, tree, space)
    R = HeatResolvent(space, tree.dt)
    dt, sq = tree.dt, tree.sqdt
    out = np.zeros((tree.n_nodes, space.N))
    if y0 is not None:
        y0 = np.asarray(y0, dtype=float).reshape(-1)
        if y0.shape != (space.N,):
            raise ShapeError(f"initial datum has length {y0.size}, expected {space.N}")
        out[0] = y0
    a2zero = a2.is_zero()
    for k in range(tree.K):
        rk, rn = tree.rows(k), tree.rows(k + 1)
        yk = out[rk]
        base = (1.0 + dt * a1.at(tree, k)) * yk
        if f is not None:
            base = base + dt * f[rk]
        noise = None if a2zero else a2.at(tree, k) * yk
        if g is not None:
            noise = g[rk] if noise is None else noise + g[rk]
        nxt = out[rn]
        if noise is None:
            nxt[0::2] = base
            nxt[1::2] = base
        else:
            nxt[0::2] = base + sq * noise
            nxt[1::2] = base - sq * noise
        out[rn] = R(nxt)
    return AdaptedField(tree, space, out)


@dataclass
class BackwardSolution:
    """Adapted pair (y, Y) plus the implicit stage p used in dt-integrals."""

    y: AdaptedField
    Y: AdaptedField
    stage: AdaptedField


def backward_solve(tree, space, a1, a2, yT=None, f=None, g=None) -> BackwardSolution:
    a1, a2 = Coefficient(a1), Coefficient(a2)
    _guard(tree, a1)
    f, g = _data(f, tree, space), _data(g, tree, space)
    R = HeatResolvent(space, tree.dt)
    dt, sq = tree.dt, tree.sqdt
    y = np.zeros((tree.n_nodes, space.N))
    Y = np.zeros_like(y)
    P = np.zeros_like(y)
    if yT is not None:
        yT = np.asarray(yT, dtype=float)
        if yT.shape != (2**tree.K, space.N):
            raise ShapeError(f"terminal datum shape {yT.shape} != {(2**tree.K, space.N)}")
        y[tree.rows(tree.K)] = yT
    a2zero = a2.is_zero()
    for k in range(tree.K - 1, -1, -1):
        rk, rn = tree.rows(k), tree.rows(k + 1)
        nxt = y[rn]
        n = nxt.shape[0] // 2
        stack = np.empty((2 * n, space.N))
        stack[:n] = 0.5 * (nxt[0::2] + nxt[1::2])
        stack[n:] = (nxt[0::2] - nxt[1::2]) / (2.0 * sq)
        stack = R(stack)
        p, Yk = stack[:n], stack[n:]
        if g is not None:
            Yk = Yk - g[rk]
        yk = (1.0 - dt * a1.at(tree, k)) * p
        if not a2zero:
            yk = yk - dt * a2.at(tree, k) * Yk
        if f is not None:
            yk = yk - dt * f[rk]
        P[rk] = p
        Y[rk] = Yk
        y[rk] = yk
    return BackwardSolution(
        AdaptedField(tree, space, y), AdaptedField(tree, space, Y), AdaptedField(tree, space, P)
    )


@dataclass
class LinearSPDEProblem:
    direction: str
    a1: object
    a2: object
    drift: AdaptedField | None = None
    diffusion: AdaptedField | None = None
    datum: np.ndarray | None = None


def solve_forward(tree, space, problem: LinearSPDEProblem) -> AdaptedField:
    if problem.direction != "forward":
        raise ShapeError("solve_forward needs a forward problem")
    return forward_solve(tree, space, problem.a1, problem.a2, problem.datum, problem.drift, problem.diffusion)


def solve_backward(tree, space, problem: LinearSPDEProblem) -> BackwardSolution:
    if problem.direction != "backward":
        raise ShapeError("solve_backward needs a backward problem")
    return backward_solve(tree, space, problem.a1, problem.a2, problem.datum, problem.drift, problem.diffusion)
