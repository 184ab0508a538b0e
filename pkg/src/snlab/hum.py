"""Leader layer: penalized dual functionals and their minimizers.

The candidate is the adjoint datum: phi_T on the terminal nodes (forward
game) or a deterministic phi_0 (backward game).  With controls read off the
adjoint, u = (1_{G0} phi, observation_2), the smooth part S of each
functional has gradient

    forward:   grad S(x) = y(T) - y_T          (y_T = 0 for the null goal)
    backward:  grad S(x) = -y(0) + y_0         (y_0 = 0 for the null goal)

where y solves the primal coupled system driven by those controls.  So
grad S(x) = G x + b with G the (symmetric, semidefinite) controllability
Gramian and b the data response.  Null and approximate goals add eps |x|.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, ShapeError
from .game import BACKWARD, FORWARD, Game, GameData
from .lattice import AdaptedField, ScalarProcess, running_inner
from .nash import solve_nash
from .optimality import observations, solve_coupled, target_pairing

log = logging.getLogger(__name__)

GOALS = ("exact", "null", "approximate")


@dataclass
class HUMProblem:
    """``y0``: initial datum (forward) or initial target (backward, approximate/exact).
    ``yT``: terminal target (forward, approximate/exact) or terminal datum (backward).
    """

    game: Game
    direction: str
    goal: str
    epsilon: float | None = None
    y0: np.ndarray | None = None
    yT: np.ndarray | None = None
    targets: list | None = None
    targets_Y: list | None = None
    rho: ScalarProcess | None = None
    coupled_tol: float = 1e-12

    def __post_init__(self):
        if self.direction not in (FORWARD, BACKWARD):
            raise DomainError(f"unknown direction {self.direction!r}")
        if self.goal not in GOALS:
            raise DomainError(f"unknown goal {self.goal!r}")
        if self.goal != "exact" and not (self.epsilon is not None and self.epsilon > 0):
            raise DomainError("null and approximate goals need epsilon > 0")
        N, K = self.game.space.N, self.game.tree.K
        if self.y0 is not None:
            self.y0 = np.asarray(self.y0, dtype=float).reshape(-1)
            if self.y0.shape != (N,):
                raise ShapeError("y0 must have one value per grid point")
        if self.yT is not None:
            self.yT = np.asarray(self.yT, dtype=float)
            if self.yT.shape != (2**K, N):
                raise ShapeError(f"yT must have shape {(2**K, N)}")
        if self.rho is not None and self.weighted_target_norm() == np.inf:
            raise DomainError("targets are not finite in the rho-weighted norm")

    @property
    def shape(self):
        if self.direction == FORWARD:
            return (2**self.game.tree.K, self.game.space.N)
        return (self.game.space.N,)

    @property
    def weight(self) -> float:
        """Per-entry weight of the candidate inner product."""
        h = self.game.space.h
        return h * 2.0**-self.game.tree.K if self.direction == FORWARD else h

    def inner(self, a, b) -> float:
        return float(self.weight * np.sum(a * b))

    def norm(self, a) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def game_data(self, u1=None, u2=None, with_data=True) -> GameData:
        datum = self.y0 if self.direction == FORWARD else self.yT
        if not with_data:
            return GameData(u1, u2, None, None, None)
        return GameData(u1, u2, datum, self.targets, self.targets_Y)

    def weighted_target_norm(self) -> float:
        """sum E int rho^2 |O_i y_{i,d}|^2 (+ sum E int rho^2 |Ot_i Y_{i,d}|^2 backward)."""
        g = self.game
        tot = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for i, fo in enumerate(g.followers):
                if self.targets is not None and self.targets[i] is not None:
                    r = self.targets[i].running * fo.O
                    tot += running_inner(g.tree, g.space.h, r, r, self.rho)
                if self.direction == BACKWARD and self.targets_Y is not None and self.targets_Y[i] is not None:
                    r = self.targets_Y[i].running * fo.Ot
                    tot += running_inner(g.tree, g.space.h, r, r, self.rho)
        return float(tot) if np.isfinite(tot) else np.inf


def _system(problem):
    return ("fwd-adjoint", "fwd-primal") if problem.direction == FORWARD else ("bwd-adjoint", "bwd-primal")


def solve_adjoint(problem: HUMProblem, x):
    return solve_coupled(problem.game, _system(problem)[0], None, np.asarray(x).reshape(problem.shape), tol=problem.coupled_tol)


def controls_from_adjoint(problem: HUMProblem, adj):
    g = problem.game
    o1, o2 = observations(g, adj)
    u1, u2 = g.zeros(), g.zeros()
    u1.running[:] = o1
    u2.running[:] = o2
    return u1, u2


def extract_controls(problem: HUMProblem, minimizer):
    """Leader controls (1_{G0} phi, observation_2) of the minimizer's adjoint."""
    if not np.any(minimizer):
        return problem.game.zeros(), problem.game.zeros()
    return controls_from_adjoint(problem, solve_adjoint(problem, minimizer))


def controlled_state(problem: HUMProblem, u1, u2, with_data=True):
    """Primal coupled solution driven by the leader controls (followers at Nash)."""
    return solve_coupled(problem.game, _system(problem)[1], problem.game_data(u1, u2, with_data), tol=problem.coupled_tol)


def _endpoint(problem, state):
    if problem.direction == FORWARD:
        return state.y.terminal.copy()
    return state.y.y.level(0)[0].copy()


def _goal_data(problem):
    if problem.goal == "null":
        return None
    return problem.yT if problem.direction == FORWARD else problem.y0


def smooth_gradient(problem: HUMProblem, x, with_data=True) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(problem.shape)
    if np.any(x):
        u1, u2 = controls_from_adjoint(problem, solve_adjoint(problem, x))
    else:
        u1 = u2 = None
        if not with_data:
            return np.zeros(problem.shape)
    end = _endpoint(problem, controlled_state(problem, u1, u2, with_data))
    grad = end if problem.direction == FORWARD else -end
    target = _goal_data(problem)
    if with_data and target is not None:
        grad = grad - target if problem.direction == FORWARD else grad + target
    return grad


def gramian_apply(problem: HUMProblem, x) -> np.ndarray:
    """G x: the data-free part of the smooth gradient."""
    return smooth_gradient(problem, x, with_data=False)


@dataclass
class FunctionalValue:
    smooth: float
    penalty: float
    gradient: np.ndarray

    @property
    def value(self) -> float:
        return self.smooth + self.penalty


def eval_functional(problem: HUMProblem, x) -> FunctionalValue:
    """Smooth part, eps-penalty and smooth gradient at candidate x."""
    g = problem.game
    x = np.asarray(x, dtype=float).reshape(problem.shape)
    data = problem.game_data()
    if not np.any(x):
        return FunctionalValue(0.0, 0.0, smooth_gradient(problem, x))
    adj = solve_adjoint(problem, x)
    o1, o2 = observations(g, adj)
    val = 0.5 * (g.inner(o1, o1) + g.inner(o2, o2)) + target_pairing(g, data, adj)
    h = g.space.h
    if problem.direction == FORWARD:
        if problem.y0 is not None:
            val += h * float(problem.y0 @ adj.phi.y.level(0)[0])
        if problem.goal != "null" and problem.yT is not None:
            val -= problem.inner(problem.yT, x)
    else:
        if problem.yT is not None:
            val -= g.terminal_inner(problem.yT, adj.phi.terminal)
        if problem.goal != "null" and problem.y0 is not None:
            val += problem.inner(problem.y0, x)
    pen = 0.0 if problem.goal == "exact" else problem.epsilon * problem.norm(x)
    u1, u2 = controls_from_adjoint(problem, adj)
    end = _endpoint(problem, controlled_state(problem, u1, u2))
    grad = end if problem.direction == FORWARD else -end
    target = _goal_data(problem)
    if target is not None:
        grad = grad - target if problem.direction == FORWARD else grad + target
    return FunctionalValue(float(val), float(pen), grad)


@dataclass
class HUMResult:
    minimizer: np.ndarray
    controls: tuple
    achieved: float
    cost: float
    iterations: int
    method: str
    converged: bool
    optimality: float
    history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    seconds: float = 0.0


def _shrink(problem, v, t):
    n = problem.norm(v)
    eps = problem.epsilon
    return np.zeros_like(v) if n <= t * eps else (1.0 - t * eps / n) * v


def prox_gradient_mapping(problem: HUMProblem, x, grad, t) -> float:
    if problem.goal == "exact":
        return problem.norm(grad)
    return problem.norm(x - _shrink(problem, x - t * grad, t)) / t


def _lanczos(problem, Gmv, b, eps, tol_abs, cap):
    """Minimize 0.5<x,Gx> + <b,x> + eps|x| on growing Krylov spaces.

    On span V_k the minimizer solves (T_k + s) y = -|b| e1 with s > 0 fixed by
    |s y| = eps (a scalar secular equation in log s); eps = None means s = 0.
    The true residual norm equals |beta_k e_k^T y| by the Lanczos relation.
    """
    nb = problem.norm(b)
    w = problem.weight
    V = np.empty((cap + 1, b.size))
    V[0] = (b / nb).ravel()
    alph, bets, hist = [], [], []
    x, ritz, sig = None, None, 0.0
    for k in range(1, cap + 1):
        v = V[k - 1].reshape(b.shape)
        gv = Gmv(v).ravel()
        a = w * float(gv @ V[k - 1])
        alph.append(a)
        r = gv - a * V[k - 1]
        if bets:
            r = r - bets[-1] * V[k - 2]
        for _ in range(2):
            r = r - (w * (V[:k] @ r)) @ V[:k]
        bn = np.sqrt(w * float(r @ r))
        ritz, U = eigh_tridiagonal(np.array(alph), np.array(bets))
        c = nb * U[0, :]
        if eps is None:
            keep = ritz > 1e-14 * max(ritz[-1], 1e-300)
            y = -(U[:, keep] @ (c[keep] / ritz[keep]))
        else:
            def excess(ls):
                s = np.exp(ls)
                return np.sqrt(np.sum((s * c / (np.maximum(ritz, 0.0) + s)) ** 2)) - eps

            hi = np.log(max(nb, 1.0)) + 10.0
            lo = -80.0
            if excess(lo) > 0:
                lo = -700.0
            if excess(lo) > 0:
                y = -(U @ (c / np.maximum(ritz, 1e-300)))
                sig = 0.0
            else:
                sig = float(np.exp(brentq(excess, lo, hi, xtol=1e-15, rtol=1e-15)))
                y = -(U @ (c / (np.maximum(ritz, 0.0) + sig)))
        res = abs(bn * y[-1])
        hist.append(float(res))
        x = (y @ V[:k]).reshape(b.shape)
        if res <= tol_abs or bn <= 1e-14 * nb:
            return x, k, True, hist, ritz, sig
        V[k] = r / bn
        bets.append(bn)
    return x, cap, False, hist, ritz, sig


def _apg(problem, Gmv, b, x0, tol_abs, cap):
    """Accelerated proximal gradient with Barzilai-Borwein steps and restart."""
    eps = problem.epsilon
    nrm = problem.norm

    def F(x, Gx):
        return 0.5 * problem.inner(x, Gx) + problem.inner(b, x) + eps * nrm(x)

    x = np.zeros(problem.shape) if x0 is None else np.asarray(x0, dtype=float).reshape(problem.shape)
    Gx = Gmv(x) if np.any(x) else np.zeros(problem.shape)
    Gb = Gmv(b)
    t = nrm(b) / max(nrm(Gb), 1e-300)
    yv, Gy, th = x.copy(), Gx.copy(), 1.0
    Fold = F(x, Gx)
    hist = []
    for it in range(1, cap + 1):
        xn = _shrink(problem, yv - t * (Gy + b), t)
        Gxn = Gmv(xn)
        s, r = xn - yv, Gxn - Gy
        sr = problem.inner(s, r)
        tn = problem.inner(s, s) / sr if sr > 0 else t
        Fn = F(xn, Gxn)
        if Fn > Fold:
            th, yv, Gy = 1.0, xn, Gxn
        else:
            thn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * th * th))
            mom = (th - 1.0) / thn
            th = thn
            yv, Gy = xn + mom * (xn - x), Gxn + mom * (Gxn - Gx)
        x, Gx, Fold, t = xn, Gxn, Fn, tn
        pg = prox_gradient_mapping(problem, x, Gx + b, t)
        hist.append(float(pg))
        if pg <= tol_abs:
            return x, it, True, hist
    return x, cap, False, hist


def minimize(problem: HUMProblem, method="lanczos", tol=1e-8, maxiter=2000, x0=None) -> HUMResult:
    """Minimize the goal's dual functional and read off the leader controls.

    Converged when the proximal-gradient mapping is <= tol (1 + |b|), b the
    data response (gradient of the smooth part at zero).  For null and
    approximate goals the Krylov route targets eps - tol (1 + |b|) / 2 so that
    rounding cannot push the achieved distance over eps.
    """
    t0 = time.perf_counter()
    b = smooth_gradient(problem, np.zeros(problem.shape))
    nb = problem.norm(b)
    tol_abs = tol * (1.0 + nb)
    diag = {"data_response": nb}
    Gmv = lambda v: gramian_apply(problem, v)  # noqa: E731
    if problem.goal != "exact" and nb <= problem.epsilon:
        x = np.zeros(problem.shape)
        res = _finish(problem, x, 0, method, True, 0.0, [], diag, t0)
        return res
    if nb == 0:
        return _finish(problem, np.zeros(problem.shape), 0, method, True, 0.0, [], diag, t0)
    if method == "lanczos":
        cap = min(maxiter, int(np.prod(problem.shape)))
        eps = None if problem.goal == "exact" else max(problem.epsilon - 0.5 * tol_abs, 0.5 * problem.epsilon)
        x, its, ok, hist, ritz, sig = _lanczos(problem, Gmv, b, eps, 0.25 * tol_abs, cap)
        diag.update(ritz_max=float(ritz[-1]), ritz_min=float(ritz[0]), shift=sig)
        diag["condition_estimate"] = float(ritz[-1] / ritz[0]) if ritz[0] > 0 else np.inf
        step = 1.0 / max(ritz[-1], 1e-300)
    elif method == "apg":
        if problem.goal == "exact":
            raise DomainError("the exact goal has no nonsmooth term; use method='lanczos'")
        x, its, ok, hist = _apg(problem, Gmv, b, x0, tol_abs, maxiter)
        step = None
    else:
        raise DomainError(f"unknown method {method!r}")
    grad = Gmv(x) + b
    if step is None:
        step = problem.norm(x) / max(problem.norm(grad), 1e-300) if np.any(x) else 1.0
    pg = prox_gradient_mapping(problem, x, grad, step)
    diag["prox_gradient_mapping"] = pg
    ok = ok and pg <= tol_abs
    if not ok:
        if problem.goal == "exact":
            log.warning("exact goal not reached: residual %.3e after %d iterations", pg, its)
            return _finish(problem, x, its, method, False, pg, hist, diag, t0)
        raise ConvergenceError(f"{method} did not converge in {its} iterations (mapping {pg:.3e})", hist)
    return _finish(problem, x, its, method, True, pg, hist, diag, t0)


def _finish(problem, x, its, method, ok, pg, hist, diag, t0):
    u1, u2 = extract_controls(problem, x)
    g = problem.game
    cost = g.inner(u1, u1) + g.inner(u2, u2)
    ach = achieved_distance(problem, u1, u2)
    return HUMResult(x, (u1, u2), ach, float(cost), its, method, ok, pg, hist, diag, time.perf_counter() - t0)


def achieved_distance(problem: HUMProblem, u1, u2) -> float:
    """|y(T) - y_T| (forward) or |y(0) - y_0| (backward) after re-solving the controlled system."""
    end = _endpoint(problem, controlled_state(problem, u1, u2))
    target = _goal_data(problem)
    if target is not None:
        end = end - target
    return problem.norm(end)


def data_norm(problem: HUMProblem) -> float:
    """E|y0|^2 (forward) or E|yT|^2 (backward) plus the rho-weighted target norms."""
    g = problem.game
    tot = 0.0
    if problem.direction == FORWARD and problem.y0 is not None:
        tot += g.space.h * float(problem.y0 @ problem.y0)
    if problem.direction == BACKWARD and problem.yT is not None:
        tot += g.terminal_inner(problem.yT, problem.yT)
    return tot + problem.weighted_target_norm()


def certify(problem: HUMProblem, result: HUMResult, nash=True) -> dict:
    """Goal attainment, empirical cost constant and Nash residuals of the induced followers."""
    if problem.goal == "exact":
        met = result.converged
    else:
        met = result.achieved <= problem.epsilon
    den = data_norm(problem)
    rep = {
        "goal": problem.goal,
        "direction": problem.direction,
        "epsilon": problem.epsilon,
        "achieved": result.achieved,
        "goal_met": bool(met),
        "cost": result.cost,
        "data_norm": den,
        "cost_ratio": (result.cost / den) if den > 0 else (0.0 if result.cost == 0 else np.inf),
    }
    if nash:
        u1, u2 = result.controls
        sol = solve_nash(problem.game, problem.game_data(u1, u2), problem.direction)
        rep["nash_residual"] = max(sol.residuals, default=0.0)
        rep["nash_characterization_gap"] = sol.characterization_gap
        rep["nash_iterations"] = sol.iterations
    return rep
