"""Carleman weight family, weighted norms and empirical observability ratios.

Weights (eta0 a bump on (0, L), mu >= 1, lambda >= 1):

    alpha(t, x) = (exp(mu eta0(x)) - exp(2 mu |eta0|_inf)) / (t (T - t)),
    theta = exp(lambda alpha),  gamma = 1 / (t (T - t)).

The modified family replaces t (T - t) by ell(t) = t (T - t) on [0, T/2] and
T^2/4 on [T/2, T], and rho(t) = exp(-lambda alpha_bar*(t)) with
alpha_bar*(t) = min_x alpha_bar(t, x).  In backward mode rho blows up at t = 0;
forward mode uses the mirrored ell(T - t), so rho blows up at t = T.

Weights that are singular at a lattice level are sampled at the cell
midpoint t_k + dt/2 wherever a time integral needs them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eig

from .errors import DomainError, GeometryError
from .game import BACKWARD, FORWARD, Game
from .grid import SpatialGrid, make_mask
from .lattice import AdaptedField, ScalarProcess, TreeGrid
from .optimality import observations, solve_coupled


@dataclass(frozen=True)
class Eta0:
    """Piecewise-quadratic bump: zero at 0 and L, maximum ``height`` at ``center``, C^1."""

    L: float
    center: float
    height: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c, L = self.center, self.L
        u = np.where(x <= c, (c - x) / c, (x - c) / (L - c))
        return self.height * (1.0 - u**2)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        c, L = self.center, self.L
        return np.where(x <= c, 2.0 * self.height * (c - x) / c**2, -2.0 * self.height * (x - c) / (L - c) ** 2)

    @property
    def sup(self) -> float:
        return self.height


def build_eta0(grid: SpatialGrid, B, height: float = 0.1) -> Eta0:
    """Bump with its maximum at the center of the index range ``B`` = (lo, hi).

    Validates eta0 > 0 at every node, eta0 = 0 at both endpoints and
    |eta0'| > 0 at every node outside B.
    """
    lo, hi = int(B[0]), int(B[1])
    if lo > hi:
        raise GeometryError(f"empty critical set [{lo}, {hi}]")
    if lo <= 1 or hi >= grid.N:
        raise GeometryError(f"critical set [{lo}, {hi}] touches the boundary of [1, {grid.N}]")
    x = grid.x
    c = 0.5 * (x[lo - 1] + x[hi - 1])
    eta = Eta0(grid.L, float(c), float(height))
    check = eta0_conditions(grid, eta, B)
    if not all(check.values()):
        raise GeometryError(f"eta0 conditions failed: {check}")
    return eta


def eta0_conditions(grid: SpatialGrid, eta: Eta0, B) -> dict:
    x = grid.x
    inB = make_mask(grid, B) > 0
    vals = eta(x)
    return {
        "positive_inside": bool(np.all(vals > 0)),
        "zero_on_boundary": bool(eta(0.0) == 0.0 and abs(eta(grid.L)) <= 1e-15 * max(1.0, eta.sup)),
        "gradient_nonzero_outside_B": bool(np.all(np.abs(eta.derivative(x[~inB])) > 0)),
        "argmax_in_B": bool(inB[int(np.argmax(vals))]),
    }


@dataclass(frozen=True)
class CarlemanParams:
    lam: float
    mu: float
    eta0: Eta0
    T: float
    direction: str = BACKWARD

    def __post_init__(self):
        if self.lam < 1 or self.mu < 1:
            raise DomainError("lambda and mu must be >= 1")
        if self.direction not in (FORWARD, BACKWARD):
            raise DomainError(f"unknown direction {self.direction!r}")


def ell(t, T, direction=BACKWARD):
    """Modified time weight; mirrored in forward mode."""
    t = np.asarray(t, dtype=float)
    s = T - t if direction == FORWARD else t
    return np.where(s <= T / 2, s * (T - s), T**2 / 4)


def _check_time(t, T, mode, direction):
    t = np.asarray(t, dtype=float)
    if mode == "standard":
        bad = (t <= 0) | (t >= T)
    elif direction == BACKWARD:
        bad = (t <= 0) | (t > T)
    else:
        bad = (t < 0) | (t >= T)
    if np.any(bad):
        raise DomainError(f"t outside the domain of the {mode} weight")


def eval_weights(params: CarlemanParams, t, mode="modified", x=None) -> dict:
    """alpha, theta, gamma (arrays over x), ell and rho at time t."""
    if mode not in ("standard", "modified"):
        raise ValueError(f"unknown mode {mode!r}")
    T, mu, lam, eta = params.T, params.mu, params.lam, params.eta0
    _check_time(t, T, mode, params.direction)
    t = float(t)
    if x is None:
        x = np.linspace(0.0, eta.L, 101)
    top = np.exp(2.0 * mu * eta.sup)
    num = np.exp(mu * eta(x)) - top
    if mode == "standard":
        den = t * (T - t)
    else:
        den = float(ell(t, T, params.direction))
    a = num / den
    out = {
        "alpha": a,
        "theta": np.exp(lam * a),
        "gamma": np.full_like(a, 1.0 / den),
        "ell": den,
        "rho": rho(params, t) if _rho_defined(t, T, params.direction) else np.inf,
    }
    return out


def _rho_defined(t, T, direction):
    return (t > 0) if direction == BACKWARD else (t < T)


def alpha_star(params: CarlemanParams, t):
    """min over x in the closed interval of alpha_bar(t, x); attained where eta0 = 0."""
    top = np.exp(2.0 * params.mu * params.eta0.sup)
    return (1.0 - top) / ell(t, params.T, params.direction)


def log_rho(params: CarlemanParams, t):
    """log rho = -lambda alpha_bar*, finite wherever ell > 0 even when rho overflows."""
    return -params.lam * alpha_star(params, t)


def rho(params: CarlemanParams, t):
    with np.errstate(over="ignore", divide="ignore"):
        return np.exp(-params.lam * alpha_star(params, t))


def midpoint_times(tree: TreeGrid) -> np.ndarray:
    return tree.dt * (np.arange(tree.K) + 0.5)


def rho_process(params: CarlemanParams, tree: TreeGrid) -> ScalarProcess:
    """rho sampled at cell midpoints, one value per level (level K repeats level K-1)."""
    r = rho(params, midpoint_times(tree))
    if not np.all(np.isfinite(r)):
        raise DomainError("rho overflows on this lattice; reduce lambda or the eta0 height")
    return ScalarProcess.from_levels(tree, np.append(r, r[-1]))


def weighted_norm_I(z: AdaptedField, params: CarlemanParams, mode="standard", t1=None, t2=None) -> float:
    """Weighted energy over levels whose midpoint lies in [t1, t2].

    standard:  lambda^3 E int int theta^2 gamma^3 z^2 + lambda E int int theta^2 gamma |z_x|^2
    modified:  E int int theta_bar^2 gamma_bar^3 z^2 + E int int theta_bar^2 gamma_bar |z_x|^2
    z_x uses forward differences including both boundary edges, with the
    weight evaluated at edge midpoints.
    """
    tree, sp = z.tree, z.space
    T = tree.T
    t1 = 0.0 if t1 is None else t1
    t2 = T if t2 is None else t2
    h = sp.h
    xn = sp.x
    xe = h * (np.arange(sp.N + 1) + 0.5)
    lam = params.lam
    pz3, pg = (lam**3, lam) if mode == "standard" else (1.0, 1.0)
    total = 0.0
    for k, tk in enumerate(midpoint_times(tree)):
        if tk < t1 or tk > t2:
            continue
        wn = eval_weights(params, tk, mode, xn)
        we = eval_weights(params, tk, mode, xe)
        zk = z.level(k)
        pad = np.zeros((zk.shape[0], sp.N + 2))
        pad[:, 1:-1] = zk
        grad = np.diff(pad, axis=1) / h
        e0 = (wn["theta"] ** 2 * wn["gamma"] ** 3 * zk**2).sum(axis=1)
        e1 = (we["theta"] ** 2 * we["gamma"] * grad**2).sum(axis=1)
        total += tree.dt * 2.0**-k * h * float(np.sum(pz3 * e0 + pg * e1))
    return total


# --- observability ratios -------------------------------------------------


def backward_assumptions(game: Game) -> list:
    """Violations of: Ot_i = whole domain, alpha~_i = alpha_i, O_i equal for all i, O_d meets G0."""
    out = []
    O = game.followers[0].O
    for i, fo in enumerate(game.followers):
        if not np.all(fo.Ot == 1):
            out.append(f"follower {i}: integrand observation region must be the whole domain")
        if fo.alpha_t != fo.alpha:
            out.append(f"follower {i}: alpha~ must equal alpha")
        if not np.array_equal(fo.O, O):
            out.append(f"follower {i}: observation regions O_i must coincide")
    if not np.any(O * game.G0):
        out.append("observation region O_d does not meet the control region G0")
    return out


def _datum_shape(game, system):
    if system == BACKWARD:
        return (game.space.N,)
    return (2**game.tree.K, game.space.N)


def observation_parts(game: Game, system: str, datum, rho_sp: ScalarProcess):
    """(LHS parts, RHS parts) as lists of (array, weight-vector) for one adjoint datum."""
    tree, h = game.tree, game.space.h
    nr = tree.n_running
    lv = tree.row_levels()
    rw = tree.dt * h * 2.0 ** (-lv[:nr].astype(float))
    inv2 = rho_sp.values[:nr] ** -2.0
    if system == BACKWARD:
        adj = solve_coupled(game, "bwd-adjoint", None, datum)
        lhs = [(adj.phi.terminal, np.full(2**tree.K, h * 2.0**-tree.K))]
        for psi in adj.psi:
            lhs.append((psi.stage.running, rw * inv2))
            lhs.append((psi.Y.running, rw * inv2))
    else:
        adj = solve_coupled(game, "fwd-adjoint", None, datum)
        lhs = [(adj.phi.y.level(0), np.array([h]))]
        for psi, fo in zip(adj.psi, game.followers):
            lhs.append((psi.running * fo.O, rw * inv2))
    o1, o2 = observations(game, adj)
    rhs = [(o1, rw), (o2, rw)]
    return lhs, rhs


def gronwall_ratio(game: Game, system: str, datum, rho_sp: ScalarProcess) -> float:
    """Follower terms of the observability LHS over E int rho^-2 |phi|^2, for one datum.

    Only measured: the discrete constant in the bound of the follower adjoints
    by the leader adjoint has no closed form.
    """
    tree, h = game.tree, game.space.h
    nr = tree.n_running
    lv = tree.row_levels()
    w = tree.dt * h * 2.0 ** (-lv[:nr].astype(float)) * rho_sp.values[:nr] ** -2.0
    lhs, _ = observation_parts(game, system, datum, rho_sp)
    num = sum(float(np.sum(wt[:, None] * a * a)) for a, wt in lhs[1:])
    if system == BACKWARD:
        phi = solve_coupled(game, "bwd-adjoint", None, datum).phi.running
    else:
        phi = solve_coupled(game, "fwd-adjoint", None, datum).phi.stage.running
    den = float(np.sum(w[:, None] * phi * phi))
    return num / den if den > 0 else np.inf


def _form_matrices(game, system, rho_sp):
    """Gram matrices (A, B, W) of LHS, RHS and the datum norm by unit-vector probing."""
    shape = _datum_shape(game, system)
    n = int(np.prod(shape))
    colsA, colsB = [], []
    wA = wB = None
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        lhs, rhs = observation_parts(game, system, e.reshape(shape), rho_sp)
        colsA.append(np.concatenate([np.sqrt(w)[:, None] * a for a, w in lhs], axis=0).ravel())
        colsB.append(np.concatenate([np.sqrt(w)[:, None] * a for a, w in rhs], axis=0).ravel())
    LA = np.array(colsA).T
    LB = np.array(colsB).T
    A = LA.T @ LA
    Bm = LB.T @ LB
    dw = game.space.h * (1.0 if system == BACKWARD else 2.0**-game.tree.K)
    W = dw * np.eye(n)
    return 0.5 * (A + A.T), 0.5 * (Bm + Bm.T), W


def _subspace_pick(V, AV, BV, inner, maximize):
    """Rayleigh-Ritz for the pencil (A, B) on span V; returns coefficients and value."""
    k = len(V)
    S = np.array([[inner(V[i], V[j]) for j in range(k)] for i in range(k)])
    a = np.array([[inner(V[i], AV[j]) for j in range(k)] for i in range(k)])
    b = np.array([[inner(V[i], BV[j]) for j in range(k)] for i in range(k)])
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    keep = lam > 1e-12 * lam[-1]
    Tm = U[:, keep] / np.sqrt(lam[keep])
    a2 = Tm.T @ (0.5 * (a + a.T)) @ Tm
    b2 = Tm.T @ (0.5 * (b + b.T)) @ Tm
    ev, vecs = eig(a2, b2)
    vals = np.real(ev)
    ok = np.flatnonzero(np.isfinite(vals) & (np.abs(np.imag(ev)) <= 1e-12 * (1 + np.abs(vals))))
    if ok.size == 0:
        return None, np.inf if maximize else 0.0
    j = ok[np.argmax(vals[ok])] if maximize else ok[np.argmin(vals[ok])]
    return Tm @ np.real(vecs[:, j]), float(vals[j])


def _ascent(apply, inner, x, steps, maximize=True, tol=1e-10):
    """Locally optimal (three-term) normalized gradient ascent of <x,Ax>/<x,Bx>.

    ``apply(v)`` returns (A v, B v); A and B are self-adjoint in ``inner``.
    Minimizes instead when ``maximize`` is False.
    """
    x = x / np.sqrt(inner(x, x))
    Ax, Bx = apply(x)
    p = Ap = Bp = None
    val = inner(x, Ax) / inner(x, Bx) if inner(x, Bx) > 0 else np.inf
    for _ in range(steps):
        bx = inner(x, Bx)
        if not bx > 0:
            return x, np.inf if maximize else 0.0
        r = inner(x, Ax) / bx
        g = Ax - r * Bx
        gn = np.sqrt(inner(g, g))
        if gn <= tol * np.sqrt(inner(Ax, Ax)) or gn == 0:
            return x, r
        g = g / gn
        Ag, Bg = apply(g)
        V, AV, BV = [x, g], [Ax, Ag], [Bx, Bg]
        if p is not None:
            V.append(p)
            AV.append(Ap)
            BV.append(Bp)
        c, v = _subspace_pick(V, AV, BV, inner, maximize)
        if c is None:
            return x, v
        better = v > r if maximize else v < r
        if not better and p is None:
            return x, r
        p = sum(ci * vi for ci, vi in zip(c[1:], V[1:]))
        Ap = sum(ci * vi for ci, vi in zip(c[1:], AV[1:]))
        Bp = sum(ci * vi for ci, vi in zip(c[1:], BV[1:]))
        x = c[0] * x + p
        Ax = c[0] * Ax + Ap
        Bx = c[0] * Bx + Bp
        nx = np.sqrt(inner(x, x))
        x, Ax, Bx = x / nx, Ax / nx, Bx / nx
        pn = np.sqrt(inner(p, p))
        if pn > 0:
            p, Ap, Bp = p / pn, Ap / pn, Bp / pn
        else:
            p = None
        val = v
    return x, val


def _dense_operator(game, system, rho_sp):
    A, B, W = _form_matrices(game, system, rho_sp)
    return (lambda v: (A @ v, B @ v)), (lambda u, v: float(u @ v)), B, W


def _forward_operator(game, rho_sp):
    """Matrix-free (A x, B x) for the forward form via primal coupled solves.

    With u = observations of the adjoint, B x = y(T)[controls u]; with
    y0 = phi(0) and targets rho^-2 O_i psi_i / alpha_i, A x = y(T) as well,
    by the duality relation.  Needs alpha_i > 0 for every follower.
    """
    from .game import GameData

    tree = game.tree
    nr = tree.n_running
    inv2 = rho_sp.values[:nr, None] ** -2.0
    w = game.space.h * 2.0**-tree.K

    def apply(x):
        X = x.reshape(2**tree.K, game.space.N)
        adj = solve_coupled(game, "fwd-adjoint", None, X)
        o1, o2 = observations(game, adj)
        u1, u2 = game.zeros(), game.zeros()
        u1.running[:] = o1
        u2.running[:] = o2
        yb = solve_coupled(game, "fwd-primal", GameData(u1, u2)).y.terminal
        tg = []
        for psi, fo in zip(adj.psi, game.followers):
            t = game.zeros()
            t.running[:] = inv2 * fo.O * psi.running / fo.alpha
            tg.append(t)
        ya = solve_coupled(game, "fwd-primal", GameData(None, None, adj.phi.y.level(0)[0], tg)).y.terminal
        return ya.ravel(), yb.ravel()

    return apply, (lambda u, v: float(w * (u @ v)))


def _operator(game, system, rho_sp, dense=None):
    n = int(np.prod(_datum_shape(game, system)))
    if dense is None:
        dense = system == BACKWARD or n <= 600 or any(fo.alpha <= 0 for fo in game.followers)
    if dense:
        apply, inner, _, _ = _dense_operator(game, system, rho_sp)
        return apply, inner, n
    apply, inner = _forward_operator(game, rho_sp)
    return apply, inner, n


@dataclass
class ObservabilityEstimate:
    C_hat: float
    datum: np.ndarray
    ratios: list
    lhs: float
    rhs: float
    uc_violation: bool
    assumptions: list


def estimate_observability_constant(
    game: Game, system: str, rho_sp: ScalarProcess, trials=20, steps=200, seed=0, dense=None
) -> ObservabilityEstimate:
    """Largest ratio LHS/RHS over adjoint data by normalized gradient ascent from random starts.

    backward: LHS = E|phi(T)|^2 + sum E int rho^-2 (|psi_i|^2 + |Psi_i|^2),
              RHS = E int int_{G0} phi^2 + E int int |sum alpha~_i Ot_i Psi_i - a2 phi|^2
    forward:  LHS = E|phi(0)|^2 + sum E int rho^-2 |O_i psi_i|^2,
              RHS = E int int_{G0} phi^2 + E int int Phi^2
    """
    viol = backward_assumptions(game) if system == BACKWARD else []
    if viol:
        warnings.warn("observability assumptions violated: " + "; ".join(viol))
    apply, inner, n = _operator(game, system, rho_sp, dense)
    rng = np.random.default_rng(seed)
    best, bx, ratios = -np.inf, None, []
    for _ in range(trials):
        x, r = _ascent(apply, inner, rng.standard_normal(n), steps, maximize=True)
        ratios.append(float(r))
        if r > best:
            best, bx = r, x
    Ax, Bx = apply(bx)
    lhs, rhs = inner(bx, Ax), inner(bx, Bx)
    uc = bool(not np.isfinite(best) or (rhs <= 1e-14 * abs(lhs) and lhs > 0))
    return ObservabilityEstimate(float(best), bx.reshape(_datum_shape(game, system)), ratios, lhs, rhs, uc, viol)


@dataclass
class ContinuationReport:
    min_value: float
    datum: np.ndarray
    values: list


def unique_continuation_probe(game: Game, system: str, trials=5, steps=300, seed=0) -> ContinuationReport:
    """Smallest observation energy RHS(d) over data with E|d|^2 = 1."""
    shape = _datum_shape(game, system)
    n = int(np.prod(shape))
    rho_one = ScalarProcess(game.tree, np.ones(game.tree.n_nodes))
    if system == BACKWARD or n <= 600 or any(fo.alpha <= 0 for fo in game.followers):
        _, _, Bm, W = _dense_operator(game, system, rho_one)

        def apply(v):
            return Bm @ v, W @ v

        inner = lambda u, v: float(u @ v)  # noqa: E731
    else:
        fwd, inner = _forward_operator(game, rho_one)

        def apply(v):
            return fwd(v)[1], v

    rng = np.random.default_rng(seed)
    vals, best, bx = [], np.inf, None
    for _ in range(trials):
        x, r = _ascent(apply, inner, rng.standard_normal(n), steps, maximize=False)
        vals.append(float(r))
        if r < best:
            best, bx = r, x
    if system == BACKWARD or n <= 600 or any(fo.alpha <= 0 for fo in game.followers):
        bx = bx / np.sqrt(bx @ W @ bx)
    else:
        bx = bx / np.sqrt(inner(bx, bx))
    return ContinuationReport(float(max(best, 0.0)), bx.reshape(shape), vals)
