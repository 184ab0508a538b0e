"""Problem data shared by the follower and leader layers.

A ``Game`` bundles the lattice, the spatial grid, the coefficients a1, a2,
the leader's control region G0 and the followers.  ``GameData`` carries the
leader's controls, the initial (forward game) or terminal (backward game)
datum and the follower targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError
from .grid import SpatialGrid
from .lattice import AdaptedField, TreeGrid, running_inner
from .spde import BackwardSolution, Coefficient, backward_solve, forward_solve

FORWARD = "forward"
BACKWARD = "backward"


@dataclass
class Follower:
    """Control region G_i, observation regions O_i (state) and Ot_i (integrand)."""

    G: np.ndarray
    O: np.ndarray
    alpha: float = 1.0
    beta: float = 100.0
    Ot: np.ndarray | None = None
    alpha_t: float = 0.0

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.O = np.asarray(self.O, dtype=float)
        self.Ot = np.zeros_like(self.O) if self.Ot is None else np.asarray(self.Ot, dtype=float)
        if self.beta < 1:
            raise ValueError(f"follower penalty beta must be >= 1, got {self.beta}")
        if self.alpha < 0 or self.alpha_t < 0:
            raise ValueError("mismatch weights must be nonnegative")


@dataclass
class Game:
    tree: TreeGrid
    space: SpatialGrid
    G0: np.ndarray
    followers: list
    a1: Coefficient = field(default_factory=lambda: Coefficient(0.0))
    a2: Coefficient = field(default_factory=lambda: Coefficient(0.0))

    def __post_init__(self):
        self.a1 = Coefficient(self.a1)
        self.a2 = Coefficient(self.a2)
        self.G0 = np.asarray(self.G0, dtype=float)
        for arr in [self.G0] + [f.G for f in self.followers]:
            if arr.shape != (self.space.N,):
                raise ShapeError("mask length does not match the grid")

    @property
    def m(self) -> int:
        return len(self.followers)

    def with_betas(self, betas) -> "Game":
        betas = np.broadcast_to(np.asarray(betas, dtype=float), (self.m,))
        fs = [replace(f, beta=float(b)) for f, b in zip(self.followers, betas)]
        return replace(self, followers=fs)

    def zeros(self) -> AdaptedField:
        return AdaptedField(self.tree, self.space)

    def inner(self, X, Y) -> float:
        """Space-time inner product of two fields or raw running arrays."""
        xr = X.running if isinstance(X, AdaptedField) else X
        yr = Y.running if isinstance(Y, AdaptedField) else Y
        return running_inner(self.tree, self.space.h, xr, yr)

    def terminal_inner(self, a, b) -> float:
        return float(self.space.h * 2.0**-self.tree.K * np.einsum("ij,ij->", a, b))

    def forward(self, y0=None, f=None, g=None, sign=1) -> AdaptedField:
        a1, a2 = (self.a1, self.a2) if sign > 0 else (-self.a1, -self.a2)
        return forward_solve(self.tree, self.space, a1, a2, y0, f, g)

    def backward(self, yT=None, f=None, g=None, sign=1) -> BackwardSolution:
        a1, a2 = (self.a1, self.a2) if sign > 0 else (-self.a1, -self.a2)
        return backward_solve(self.tree, self.space, a1, a2, yT, f, g)


@dataclass
class GameData:
    """Leader controls, state datum and follower targets.

    ``datum`` is y0 (length N) for the forward game and yT (2**K x N) for
    the backward game.  ``targets`` are y_{i,d}; ``targets_Y`` are Y_{i,d}
    (backward game only).  Missing entries mean zero.
    """

    u1: AdaptedField | None = None
    u2: AdaptedField | None = None
    datum: np.ndarray | None = None
    targets: list | None = None
    targets_Y: list | None = None

    def target(self, i, game):
        if self.targets is None or self.targets[i] is None:
            return game.zeros()
        return self.targets[i]

    def target_Y(self, i, game):
        if self.targets_Y is None or self.targets_Y[i] is None:
            return game.zeros()
        return self.targets_Y[i]


def leader_drift(game: Game, u1) -> AdaptedField | None:
    return None if u1 is None else u1.masked(game.G0).running_only()


def mismatch(game, i, state_running, target) -> np.ndarray:
    """Running array O_i (y - y_{i,d})."""
    return (state_running - target.running) * game.followers[i].O


def solve_follower_adjoint_forward_game(game: Game, y: AdaptedField, targets) -> list:
    """Backward adjoints z_i with drift source -alpha_i O_i (y - y_{i,d}), z_i(T) = 0."""
    out = []
    for i, fo in enumerate(game.followers):
        t = targets[i] if targets is not None and targets[i] is not None else game.zeros()
        src = game.zeros()
        src.running[:] = -fo.alpha * (y.running - t.running) * fo.O
        out.append(game.backward(None, src, None, sign=-1))
    return out


def solve_follower_adjoint_backward_game(game: Game, y: BackwardSolution, targets, targets_Y) -> list:
    """Forward adjoints z_i with drift -alpha_i O_i (y - y_d) and diffusion -alpha~_i Ot_i (Y - Y_d), z_i(0) = 0.

    The state's dt-samples are the implicit stages ``y.stage``.
    """
    out = []
    for i, fo in enumerate(game.followers):
        t = targets[i] if targets is not None and targets[i] is not None else game.zeros()
        tY = targets_Y[i] if targets_Y is not None and targets_Y[i] is not None else game.zeros()
        f = game.zeros()
        g = game.zeros()
        f.running[:] = -fo.alpha * (y.stage.running - t.running) * fo.O
        g.running[:] = -fo.alpha_t * (y.Y.running - tY.running) * fo.Ot
        out.append(game.forward(None, f, g, sign=-1))
    return out
