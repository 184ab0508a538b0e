"""Follower layer: the Nash operator equation M v = rhs for both games.

Forward game: follower i minimizes
    alpha_i/2 ||O_i (y - y_{i,d})||^2 + beta_i/2 ||v_i||^2,
with y = q + sum_j Lambda_j v_j and Lambda_j v_j the forward solve driven by
1_{G_j} v_j.  Backward game: the same with the backward state (y, Y) and the
extra term alpha~_i/2 ||Ot_i (Y - Y_{i,d})||^2.

M(v)_i = alpha_i Lambda_i^* O_i sum_j Lambda_j v_j + beta_i v_i is applied
matrix-free with one state solve and m adjoint solves.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import SolverError
from .game import BACKWARD, FORWARD, Game, GameData, leader_drift
from .lattice import AdaptedField, row_weights

log = logging.getLogger(__name__)


class ControlPacking:
    """Packs follower controls (restricted to their masks) into one vector."""

    def __init__(self, game: Game):
        self.game = game
        self.idx = [np.flatnonzero(f.G) for f in game.followers]
        n = game.tree.n_running
        self.sizes = [n * len(ix) for ix in self.idx]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        w = row_weights(game.tree, game.space.h)
        self.weights = np.concatenate([np.repeat(w, len(ix)) for ix in self.idx])

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def pack(self, vs) -> np.ndarray:
        parts = [v.running[:, ix].ravel() for v, ix in zip(vs, self.idx)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def unpack(self, x) -> list:
        g = self.game
        out = []
        for i, ix in enumerate(self.idx):
            v = g.zeros()
            v.running[:, ix] = x[self.offsets[i] : self.offsets[i + 1]].reshape(-1, len(ix))
            out.append(v)
        return out

    def block(self, x, i):
        return x[self.offsets[i] : self.offsets[i + 1]]

    def inner(self, x, y) -> float:
        """Space-time inner product of packed vectors."""
        return float(np.dot(self.weights * x, y))


def _follower_drift(game, vs):
    f = game.zeros()
    for fo, v in zip(game.followers, vs):
        if v is not None:
            f.running[:] += v.running * fo.G
    return f


def apply_lambda(game: Game, i: int, v: AdaptedField, direction=FORWARD):
    """Forward game: AdaptedField. Backward game: (stage, Y) pair."""
    vs = [None] * game.m
    vs[i] = v
    return _lambda_sum(game, vs, direction)


def _lambda_sum(game, vs, direction):
    f = _follower_drift(game, vs)
    if direction == FORWARD:
        return game.forward(None, f, None)
    sol = game.backward(None, f, None)
    return sol.stage, sol.Y


def apply_lambda_adjoint(game: Game, i: int, w, direction=FORWARD) -> AdaptedField:
    """Forward game: w is a field. Backward game: w = (w1, w2)."""
    G = game.followers[i].G
    if direction == FORWARD:
        return game.backward(None, -w.running_only(), None, sign=-1).stage.running_only().masked(G)
    w1, w2 = w
    z = game.forward(None, -w1.running_only(), -w2.running_only(), sign=-1)
    return z.running_only().masked(G)


def _adjoint_response(game, i, e1, e2, direction):
    """1_{G_i} times the follower-i adjoint driven by mismatch fields (e1[, e2]).

    Equals the gradient of follower i's mismatch terms with respect to v_i.
    """
    fo = game.followers[i]
    if direction == FORWARD:
        src = game.zeros()
        src.running[:] = -fo.alpha * e1 * fo.O
        return game.backward(None, src, None, sign=-1).stage.running * fo.G
    f = game.zeros()
    g = game.zeros()
    f.running[:] = -fo.alpha * e1 * fo.O
    g.running[:] = -fo.alpha_t * e2 * fo.Ot
    return game.forward(None, f, g, sign=-1).running * fo.G


def apply_M(game: Game, vs, direction=FORWARD) -> list:
    out = []
    if direction == FORWARD:
        Y = _lambda_sum(game, vs, direction)
        e1, e2 = Y.running, None
    else:
        P, Yb = _lambda_sum(game, vs, direction)
        e1, e2 = P.running, Yb.running
    for i, fo in enumerate(game.followers):
        w = game.zeros()
        w.running[:] = _adjoint_response(game, i, e1, e2, direction) + fo.beta * vs[i].running * fo.G
        out.append(w)
    return out


def apply_M_adjoint(game: Game, vs, direction=FORWARD) -> list:
    """Adjoint of M in the space-time inner product (m state solves, one adjoint solve)."""
    if direction == FORWARD:
        c = game.zeros()
        for i, fo in enumerate(game.followers):
            Y = apply_lambda(game, i, vs[i], direction)
            c.running[:] += fo.alpha * fo.O * Y.running
        z = game.backward(None, -c, None, sign=-1).stage.running
    else:
        c1 = game.zeros()
        c2 = game.zeros()
        for i, fo in enumerate(game.followers):
            P, Yb = apply_lambda(game, i, vs[i], direction)
            c1.running[:] += fo.alpha * fo.O * P.running
            c2.running[:] += fo.alpha_t * fo.Ot * Yb.running
        z = game.forward(None, -c1, -c2, sign=-1).running
    out = []
    for fo, v in zip(game.followers, vs):
        w = game.zeros()
        w.running[:] = (z + fo.beta * v.running) * fo.G
        out.append(w)
    return out


def leader_state(game: Game, data: GameData, direction=FORWARD):
    """State driven by the leader alone: q (forward) or the BackwardSolution (r, R)."""
    f = leader_drift(game, data.u1)
    g = None if data.u2 is None else data.u2.running_only()
    if direction == FORWARD:
        return game.forward(data.datum, f, g)
    return game.backward(data.datum, f, g)


def full_state(game: Game, data: GameData, vs, direction=FORWARD):
    f = _follower_drift(game, vs)
    lf = leader_drift(game, data.u1)
    if lf is not None:
        f = f + lf
    g = None if data.u2 is None else data.u2.running_only()
    if direction == FORWARD:
        return game.forward(data.datum, f, g)
    return game.backward(data.datum, f, g)


def _state_mismatch(game, data, i, state, direction):
    if direction == FORWARD:
        return state.running - data.target(i, game).running, None
    return (
        state.stage.running - data.target(i, game).running,
        state.Y.running - data.target_Y(i, game).running,
    )


def nash_rhs(game: Game, data: GameData, direction=FORWARD) -> list:
    """rhs_i = alpha_i Lambda_i^* O_i (y_{i,d} - q) (and the integrand term backward)."""
    q = leader_state(game, data, direction)
    out = []
    for i in range(game.m):
        e1, e2 = _state_mismatch(game, data, i, q, direction)
        r = game.zeros()
        r.running[:] = -_adjoint_response(game, i, e1, e2, direction)
        out.append(r)
    return out


def follower_cost(game: Game, data: GameData, vs, i: int, direction=FORWARD, state=None) -> float:
    fo = game.followers[i]
    if state is None:
        state = full_state(game, data, vs, direction)
    e1, e2 = _state_mismatch(game, data, i, state, direction)
    val = 0.5 * fo.alpha * game.inner(e1 * fo.O, e1 * fo.O)
    if e2 is not None:
        val += 0.5 * fo.alpha_t * game.inner(e2 * fo.Ot, e2 * fo.Ot)
    v = vs[i].running * fo.G
    return float(val + 0.5 * fo.beta * game.inner(v, v))


def follower_gradients(game: Game, data: GameData, vs, direction=FORWARD, state=None) -> list:
    """Gradient of J_i with respect to v_i for every i, via one adjoint solve each."""
    if state is None:
        state = full_state(game, data, vs, direction)
    out = []
    for i, fo in enumerate(game.followers):
        e1, e2 = _state_mismatch(game, data, i, state, direction)
        w = game.zeros()
        w.running[:] = _adjoint_response(game, i, e1, e2, direction) + fo.beta * vs[i].running * fo.G
        out.append(w)
    return out


def characterized_controls(game: Game, data: GameData, vs, direction=FORWARD) -> list:
    """v_i = -(1/beta_i) 1_{G_i} z_i from the follower adjoints of the state driven by vs."""
    state = full_state(game, data, vs, direction)
    out = []
    for i, fo in enumerate(game.followers):
        e1, e2 = _state_mismatch(game, data, i, state, direction)
        w = game.zeros()
        w.running[:] = -_adjoint_response(game, i, e1, e2, direction) / fo.beta
        out.append(w)
    return out


@dataclass
class NashSolution:
    controls: list
    direction: str
    iterations: int
    residuals: list
    characterization_gap: float
    history: list = field(default_factory=list)
    method: str = "gmres"
    converged: bool = True


def _rel(a, b):
    nb = np.linalg.norm(b)
    na = np.linalg.norm(a)
    if na == 0 and nb == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / max(na, nb))


def solve_nash(
    game: Game,
    data: GameData,
    direction=FORWARD,
    x0=None,
    rtol=1e-10,
    restart=50,
    maxiter=500,
    stationarity_tol=1e-6,
) -> NashSolution:
    pk = ControlPacking(game)
    b = pk.pack(nash_rhs(game, data, direction))

    def mv(x):
        return pk.pack(apply_M(game, pk.unpack(x), direction))

    op = LinearOperator((pk.size, pk.size), matvec=mv, dtype=float)
    history = []
    x0v = None if x0 is None else pk.pack(x0)
    method = "gmres"
    if not np.any(b) and x0v is None:
        x, info, its = np.zeros(pk.size), 0, 0
    else:
        x, info = gmres(
            op,
            b,
            x0=x0v,
            rtol=rtol,
            atol=0.0,
            restart=restart,
            maxiter=max(1, -(-maxiter // restart)),
            callback=lambda r: history.append(float(r)),
            callback_type="pr_norm",
        )
        its = len(history)
    bn = np.linalg.norm(b)
    res = np.linalg.norm(mv(x) - b) / (bn if bn > 0 else 1.0)
    if info != 0 or res > 10 * rtol:
        log.info("GMRES stalled at relative residual %.3e; trying Richardson", res)
        x, rhist = _richardson(mv, b, x, game, rtol, maxiter)
        history.extend(rhist)
        its += len(rhist)
        method = "richardson"
        res = np.linalg.norm(mv(x) - b) / (bn if bn > 0 else 1.0)
        if res > 10 * rtol:
            raise SolverError(f"Nash solve did not converge (residual {res:.3e})", history)
    vs = pk.unpack(x)
    grads = follower_gradients(game, data, vs, direction)
    char = characterized_controls(game, data, vs, direction)
    residuals = []
    for i, fo in enumerate(game.followers):
        scale = fo.beta * np.linalg.norm(vs[i].running) + np.linalg.norm(pk.block(b, i))
        g = np.linalg.norm(grads[i].running)
        residuals.append(0.0 if g == 0 else float(g / scale))
    gap = _rel(pk.pack(char), x)
    converged = max(residuals, default=0.0) <= stationarity_tol
    if not converged:
        warnings.warn(f"Nash stationarity residual {max(residuals):.2e} above tolerance")
    return NashSolution(vs, direction, its, residuals, gap, history, method, converged)


def _richardson(mv, b, x, game, rtol, maxiter):
    tau = 1.0 / max(f.beta for f in game.followers)
    bn = np.linalg.norm(b) or 1.0
    hist = []
    for _ in range(maxiter):
        r = b - mv(x)
        rn = np.linalg.norm(r) / bn
        hist.append(float(rn))
        if rn <= rtol or (len(hist) > 10 and rn > 1e3 * hist[0]):
            break
        x = x + tau * r
    return x, hist


def verify_nash(
    solution: NashSolution,
    game: Game,
    data: GameData,
    n_directions=10,
    seed=0,
    deviations=(-1.0, -0.1, 0.1, 1.0),
    tol=1e-8,
) -> dict:
    """Finite-difference stationarity and unilateral-deviation checks per follower."""
    direction = solution.direction
    rng = np.random.default_rng(seed)
    vs = solution.controls
    pk = ControlPacking(game)
    vnorm = np.sqrt(pk.inner(pk.pack(vs), pk.pack(vs)))
    fd, dev = [], []
    for i, fo in enumerate(game.followers):
        J0 = follower_cost(game, data, vs, i, direction)
        fd_i, dev_i = 0.0, np.inf
        for _ in range(n_directions):
            d = game.zeros()
            d.running[:] = rng.standard_normal(d.running.shape) * fo.G
            dn = np.sqrt(game.inner(d, d))
            if dn == 0:
                continue
            d = d * (1.0 / dn)
            s = 1e-3 * (1.0 + vnorm)
            Jp = follower_cost(game, data, _shift(vs, i, d, s), i, direction)
            Jm = follower_cost(game, data, _shift(vs, i, d, -s), i, direction)
            fd_i = max(fd_i, abs(Jp - Jm) / (2 * s))
            for t in deviations:
                Jt = follower_cost(game, data, _shift(vs, i, d, t * (1.0 + vnorm)), i, direction)
                dev_i = min(dev_i, Jt - J0)
        fd.append(fd_i)
        dev.append(dev_i)
    scale = 1.0 + vnorm
    return {
        "fd_derivative": fd,
        "fd_scaled": [v / scale for v in fd],
        "min_deviation_gain": dev,
        "stationary": all(v / scale <= 1e-6 for v in fd),
        "no_profitable_deviation": all(v >= -tol for v in dev),
    }


def _shift(vs, i, d, s):
    out = list(vs)
    out[i] = vs[i] + d * s
    return out


def _lanczos_min(apply, inner, dim, rng, steps=80):
    """Smallest Ritz value of a self-adjoint operator, full reorthogonalization."""
    steps = min(steps, dim)
    if steps == 0:
        return 0.0
    q = rng.standard_normal(dim)
    q /= np.sqrt(inner(q, q))
    Q = [q]
    alphas, betas = [], []
    for j in range(steps):
        w = apply(Q[j])
        a = inner(w, Q[j])
        alphas.append(a)
        for qq in Q:
            w = w - inner(w, qq) * qq
        for qq in Q:
            w = w - inner(w, qq) * qq
        bn = np.sqrt(max(inner(w, w), 0.0))
        scale = max(abs(a), max(betas, default=0.0), 1e-300)
        if bn <= 1e-12 * scale or j == steps - 1:
            break
        betas.append(bn)
        Q.append(w / bn)
    Tm = np.diag(alphas) + np.diag(betas[: len(alphas) - 1], 1) + np.diag(betas[: len(alphas) - 1], -1)
    return float(np.linalg.eigvalsh(Tm)[0])


def coupling_min_eigenvalue(game: Game, direction=FORWARD, seed=0, steps=80) -> float:
    """lambda_min of the symmetric part of M - diag(beta): the beta-free coupling."""
    if all(fo.alpha == 0 and fo.alpha_t == 0 for fo in game.followers):
        return 0.0
    g0 = game.with_betas(np.zeros(game.m) + 1.0)
    pk = ControlPacking(g0)

    def sym(x):
        vs = pk.unpack(x)
        a = pk.pack(apply_M(g0, vs, direction))
        b = pk.pack(apply_M_adjoint(g0, vs, direction))
        return 0.5 * (a + b) - x

    return _lanczos_min(sym, pk.inner, pk.size, np.random.default_rng(seed), steps)


def sym_min_eigenvalue(game: Game, direction=FORWARD, seed=0, steps=80) -> float:
    """lambda_min of (M + M*)/2 with the game's own penalties."""
    betas = np.array([fo.beta for fo in game.followers])
    if all(fo.alpha == 0 and fo.alpha_t == 0 for fo in game.followers):
        return float(betas.min())
    pk = ControlPacking(game)

    def sym(x):
        vs = pk.unpack(x)
        return 0.5 * (pk.pack(apply_M(game, vs, direction)) + pk.pack(apply_M_adjoint(game, vs, direction)))

    return _lanczos_min(sym, pk.inner, pk.size, np.random.default_rng(seed), steps)


def coercivity_probe(game: Game, betas, direction=FORWARD, seed=0, steps=80) -> dict:
    """lambda_min of the symmetric part of M over a grid of penalties.

    Scalar grid entries apply the same beta to every follower, and then
    lambda_min(beta) = beta + lambda_min(coupling) exactly.  Vector entries
    are probed directly.
    """
    rows = []
    cmin = None
    for b in betas:
        if np.ndim(b) == 0:
            if cmin is None:
                cmin = coupling_min_eigenvalue(game, direction, seed, steps)
            lam = float(b) + cmin
        else:
            lam = sym_min_eigenvalue(game.with_betas(b), direction, seed, steps)
        rows.append((b, lam))
    beta_bar = None
    for j, (b, lam) in enumerate(rows):
        if all(l > 0 for _, l in rows[j:]):
            beta_bar = b
            break
    return {"table": rows, "beta_bar": beta_bar, "coupling_min": cmin}
