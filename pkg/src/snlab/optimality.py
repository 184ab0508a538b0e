"""Coupled forward-backward optimality systems and their adjoints.

Four systems, each a forward and a backward component coupled through the
followers' Nash characterization:

fwd-primal   y forward with drift 1_{G0}u1 - sum 1/beta_i 1_{G_i} z_i, diffusion u2;
             z_i backward with drift -alpha_i O_i (y - y_{i,d}).
fwd-adjoint  phi backward from phi_T with drift sum alpha_i O_i psi_i;
             psi_i forward with drift 1/beta_i 1_{G_i} phi.
bwd-primal   (y, Y) backward from yT with drift 1_{G0}u1 - sum 1/beta_i 1_{G_i} z_i, diffusion u2;
             z_i forward with drift -alpha_i O_i (y - y_d), diffusion -alpha~_i Ot_i (Y - Y_d).
bwd-adjoint  phi forward from phi_0 with drift sum alpha_i O_i psi_i, diffusion sum alpha~_i Ot_i Psi_i;
             (psi_i, Psi_i) backward with drift 1/beta_i 1_{G_i} phi.

Backward components enter dt-integrals through their implicit stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import CouplingError
from .game import Game, GameData, leader_drift

log = logging.getLogger(__name__)

SYSTEMS = ("fwd-primal", "fwd-adjoint", "bwd-primal", "bwd-adjoint")


@dataclass
class CoupledState:
    system: str
    forward: object
    backward: object
    sweeps: int
    gaps: list = field(default_factory=list)
    method: str = "picard"
    omega: float = 1.0

    # convenient names per system
    @property
    def y(self):
        return self.forward if self.system == "fwd-primal" else self.backward if self.system == "bwd-primal" else None

    @property
    def z(self):
        return self.backward if self.system == "fwd-primal" else self.forward if self.system == "bwd-primal" else None

    @property
    def phi(self):
        return self.backward if self.system == "fwd-adjoint" else self.forward if self.system == "bwd-adjoint" else None

    @property
    def psi(self):
        return self.forward if self.system == "fwd-adjoint" else self.backward if self.system == "bwd-adjoint" else None


class _System:
    """Forward part given the coupling variable b, backward part given the forward part."""

    def __init__(self, game: Game, system: str, data: GameData | None, datum):
        if system not in SYSTEMS:
            raise ValueError(f"unknown system {system!r}")
        self.game, self.system, self.data, self.datum = game, system, data or GameData(), datum
        n = game.tree.n_running
        N = game.space.N
        m = game.m
        shapes = {
            "fwd-primal": (m, n, N),
            "fwd-adjoint": (1, n, N),
            "bwd-primal": (2, n, N),
            "bwd-adjoint": (m, 2, n, N),
        }
        self.shape = shapes[system]

    def forward(self, b):
        g, d = self.game, self.data
        s = self.system
        if s == "fwd-primal":
            f = g.zeros()
            lf = leader_drift(g, d.u1)
            if lf is not None:
                f.data += lf.data
            for i, fo in enumerate(g.followers):
                f.running[:] -= b[i] * fo.G / fo.beta
            u2 = None if d.u2 is None else d.u2.running_only()
            return g.forward(self.datum, f, u2)
        if s == "fwd-adjoint":
            out = []
            for fo in g.followers:
                f = g.zeros()
                f.running[:] = b[0] * fo.G / fo.beta
                out.append(g.forward(None, f, None))
            return out
        if s == "bwd-primal":
            out = []
            for i, fo in enumerate(g.followers):
                f, gg = g.zeros(), g.zeros()
                f.running[:] = -fo.alpha * fo.O * (b[0] - d.target(i, g).running)
                gg.running[:] = -fo.alpha_t * fo.Ot * (b[1] - d.target_Y(i, g).running)
                out.append(g.forward(None, f, gg, sign=-1))
            return out
        # bwd-adjoint
        f, gg = g.zeros(), g.zeros()
        for i, fo in enumerate(g.followers):
            f.running[:] += fo.alpha * fo.O * b[i, 0]
            gg.running[:] += fo.alpha_t * fo.Ot * b[i, 1]
        return g.forward(self.datum, f, gg, sign=-1)

    def backward(self, F):
        g, d = self.game, self.data
        s = self.system
        b = np.empty(self.shape)
        if s == "fwd-primal":
            out = []
            for i, fo in enumerate(g.followers):
                src = g.zeros()
                src.running[:] = -fo.alpha * fo.O * (F.running - d.target(i, g).running)
                z = g.backward(None, src, None, sign=-1)
                b[i] = z.stage.running
                out.append(z)
            return out, b
        if s == "fwd-adjoint":
            src = g.zeros()
            for psi, fo in zip(F, g.followers):
                src.running[:] += fo.alpha * fo.O * psi.running
            phi = g.backward(self.datum, src, None, sign=-1)
            b[0] = phi.stage.running
            return phi, b
        if s == "bwd-primal":
            f = g.zeros()
            lf = leader_drift(g, d.u1)
            if lf is not None:
                f.data += lf.data
            for z, fo in zip(F, g.followers):
                f.running[:] -= z.running * fo.G / fo.beta
            u2 = None if d.u2 is None else d.u2.running_only()
            y = g.backward(self.datum, f, u2)
            b[0] = y.stage.running
            b[1] = y.Y.running
            return y, b
        out = []
        for i, fo in enumerate(g.followers):
            f = g.zeros()
            f.running[:] = F.running * fo.G / fo.beta
            psi = g.backward(None, f, None)
            b[i, 0] = psi.stage.running
            b[i, 1] = psi.Y.running
            out.append(psi)
        return out, b


def _flat(F, B):
    parts = []
    for item in (F, B):
        for x in item if isinstance(item, list) else [item]:
            if hasattr(x, "stage"):
                parts += [x.y.data, x.Y.data]
            else:
                parts.append(x.data)
    return np.concatenate([p.ravel() for p in parts])


def solve_coupled(
    game: Game,
    system: str,
    data: GameData | None = None,
    datum=None,
    tol=1e-10,
    omega=1.0,
    max_sweeps=200,
    max_halvings=6,
    gmres_restart=50,
    gmres_maxiter=500,
) -> CoupledState:
    """Picard iteration with relaxation; GMRES on the fixed-point defect on stagnation.

    ``data`` carries controls and targets (primal systems); ``datum`` is the
    initial or terminal value of the system's state (y0, yT, phi_T or phi_0).
    For primal systems ``datum`` defaults to ``data.datum``.
    """
    if datum is None and data is not None and system.endswith("primal"):
        datum = data.datum
    sysm = _System(game, system, data, datum)
    b = np.zeros(sysm.shape)
    prev = None
    gaps = []
    halvings = 0
    growth = 0
    for sweep in range(1, max_sweeps + 1):
        F = sysm.forward(b)
        B, bn = sysm.backward(F)
        cur = _flat(F, B)
        if prev is None:
            diff = np.linalg.norm(cur)
        else:
            diff = np.linalg.norm(cur - prev)
        size = np.linalg.norm(cur)
        gap = 0.0 if diff == 0 else diff / size
        gaps.append(gap)
        if gap <= tol:
            return CoupledState(system, F, B, sweep, gaps, "picard", omega)
        if len(gaps) >= 2 and gaps[-1] > gaps[-2]:
            growth += 1
            if halvings < max_halvings:
                omega *= 0.5
                halvings += 1
                log.info("Picard gap grew; relaxation halved to %g", omega)
        if growth >= 10:
            break
        prev = cur
        b = (1.0 - omega) * b + omega * bn
    log.info("Picard stalled after %d sweeps (gap %.3e); escalating to GMRES", len(gaps), gaps[-1])
    return _gmres_escalation(sysm, gaps, tol, gmres_restart, gmres_maxiter)


def _gmres_escalation(sysm, gaps, tol, restart, maxiter):
    """Solve b = T(b) as (I - T_lin) b = T(0), T the sweep map."""

    def T(b):
        return sysm.backward(sysm.forward(b))[1]

    shape = sysm.shape
    t0 = T(np.zeros(shape)).ravel()

    def mv(x):
        return x - (T(x.reshape(shape)).ravel() - t0)

    op = LinearOperator((t0.size, t0.size), matvec=mv, dtype=float)
    hist = []
    x, info = gmres(
        op, t0, rtol=tol, atol=0.0, restart=restart, maxiter=max(1, -(-maxiter // restart)),
        callback=lambda r: hist.append(float(r)), callback_type="pr_norm",
    )
    if info != 0:
        raise CouplingError(
            "coupled system did not converge; the follower penalties beta_i are likely too small "
            "for the coupling strength (increase beta_i)",
            gaps + hist,
        )
    b = x.reshape(shape)
    F = sysm.forward(b)
    B, _ = sysm.backward(F)
    return CoupledState(sysm.system, F, B, len(gaps), gaps + hist, "gmres", 1.0)


def nash_controls(game: Game, state: CoupledState) -> list:
    """Follower controls -1/beta_i 1_{G_i} z_i read off a primal solution."""
    out = []
    for z, fo in zip(state.z, game.followers):
        src = z.stage if state.system == "fwd-primal" else z
        v = game.zeros()
        v.running[:] = -src.running * fo.G / fo.beta
        out.append(v)
    return out


def observations(game: Game, adj: CoupledState):
    """Observed adjoint quantities (D1* phi, observation_2) as running arrays.

    Forward game: (1_{G0} phi, Phi).  Backward game:
    (1_{G0} phi, sum alpha~_i Ot_i Psi_i - a2 phi).
    """
    if adj.system == "fwd-adjoint":
        phi = adj.phi
        return phi.stage.running * game.G0, phi.Y.running.copy()
    phi = adj.phi.running
    o2 = -game.a2.running(game.tree) * phi
    for psi, fo in zip(adj.psi, game.followers):
        o2 = o2 + fo.alpha_t * fo.Ot * psi.Y.running
    return phi * game.G0, o2


def target_pairing(game: Game, data: GameData, adj: CoupledState) -> float:
    """sum alpha_i <y_{i,d}, O_i psi_i> (+ sum alpha~_i <Y_{i,d}, Ot_i Psi_i> backward)."""
    tot = 0.0
    for i, (psi, fo) in enumerate(zip(adj.psi, game.followers)):
        if adj.system == "fwd-adjoint":
            tot += fo.alpha * game.inner(data.target(i, game).running, fo.O * psi.running)
        else:
            tot += fo.alpha * game.inner(data.target(i, game).running, fo.O * psi.stage.running)
            tot += fo.alpha_t * game.inner(data.target_Y(i, game).running, fo.Ot * psi.Y.running)
    return float(tot)


def duality_sides(game: Game, direction: str, data: GameData, adjoint_datum, tol=1e-12):
    """Both sides of the duality relation, each from its own solves.

    forward:  E<y(T), phi_T> - E<y0, phi(0)>
              = <u1, 1_{G0} phi> + <u2, Phi> + sum alpha_i <y_{i,d}, O_i psi_i>
    backward: E<yT, phi(T)> - E<y(0), phi_0>
              = <u1, 1_{G0} phi> + <u2, sum alpha~_i Ot_i Psi_i - a2 phi>
                + sum alpha_i <y_{i,d}, O_i psi_i> + sum alpha~_i <Y_{i,d}, Ot_i Psi_i>
    """
    h = game.space.h
    zero = game.zeros()
    u1 = data.u1 if data.u1 is not None else zero
    u2 = data.u2 if data.u2 is not None else zero
    if direction == "forward":
        prim = solve_coupled(game, "fwd-primal", data, tol=tol)
        adj = solve_coupled(game, "fwd-adjoint", None, adjoint_datum, tol=tol)
        y0 = np.zeros(game.space.N) if data.datum is None else np.asarray(data.datum)
        lhs = game.terminal_inner(prim.y.terminal, adjoint_datum) - h * float(y0 @ adj.phi.y.level(0)[0])
    else:
        prim = solve_coupled(game, "bwd-primal", data, tol=tol)
        adj = solve_coupled(game, "bwd-adjoint", None, adjoint_datum, tol=tol)
        yT = np.zeros((2**game.tree.K, game.space.N)) if data.datum is None else np.asarray(data.datum)
        lhs = game.terminal_inner(yT, adj.phi.terminal) - h * float(
            prim.y.y.level(0)[0] @ np.asarray(adjoint_datum).reshape(-1)
        )
    o1, o2 = observations(game, adj)
    rhs = game.inner(u1.running, o1) + game.inner(u2.running, o2) + target_pairing(game, data, adj)
    return float(lhs), float(rhs)


def duality_gap(game: Game, direction: str, data: GameData, adjoint_datum, tol=1e-12) -> float:
    lhs, rhs = duality_sides(game, direction, data, adjoint_datum, tol)
    return abs(lhs - rhs) / (1.0 + abs(lhs) + abs(rhs))
