"""Independent dense oracles for tiny instances.

Everything here assembles the defining equations of the lattice schemes as
one global linear system and solves it with numpy.linalg.  No stepping code
from the package is used, only its index conventions (row r at level k is
2**k - 1 + node, children at 2r + 1 and 2r + 2).
"""

import numpy as np


def lap(N, L=1.0):
    h = L / (N + 1)
    return (np.diag(-2.0 * np.ones(N)) + np.diag(np.ones(N - 1), 1) + np.diag(np.ones(N - 1), -1)) / h**2


def n_nodes(K):
    return 2 ** (K + 1) - 1


def level_of(r):
    return int(np.floor(np.log2(r + 1)))


def children(r):
    return 2 * r + 1, 2 * r + 2  # up, down


def paths(K):
    """All 2**K sign paths with the node visited at each level."""
    out = []
    for bits in range(2**K):
        signs = [1 if not (bits >> (K - 1 - k)) & 1 else -1 for k in range(K)]
        r, nodes = 0, [0]
        for s in signs:
            up, dn = children(r)
            r = up if s > 0 else dn
            nodes.append(r)
        out.append((signs, nodes))
    return out


def _coef(a, r, N):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        return a[r]
    return np.broadcast_to(a, (N,))


def forward_dense(K, N, T, a1, a2, y0=None, f=None, g=None, L=1.0):
    """Solve the forward scheme as one linear system over all nodes."""
    dt, sq = T / K, np.sqrt(T / K)
    n = n_nodes(K)
    D = N * n
    A = np.zeros((D, D))
    b = np.zeros(D)
    I = np.eye(N)
    R = I - dt * lap(N, L)
    blk = lambda r: slice(r * N, (r + 1) * N)  # noqa: E731
    A[blk(0), blk(0)] = I
    if y0 is not None:
        b[blk(0)] = y0
    for r in range(2**K - 1):
        A1, A2 = _coef(a1, r, N), _coef(a2, r, N)
        for c, s in zip(children(r), (1.0, -1.0)):
            A[blk(c), blk(c)] = R
            A[blk(c), blk(r)] = -np.diag(1.0 + dt * A1 + s * sq * A2)
            rhs = np.zeros(N)
            if f is not None:
                rhs += dt * f[r]
            if g is not None:
                rhs += s * sq * g[r]
            b[blk(c)] = rhs
    return np.linalg.solve(A, b).reshape(n, N)


def backward_dense(K, N, T, a1, a2, yT=None, f=None, g=None, L=1.0):
    """Backward scheme: unknowns (y, Y, p) with
    (I - dt Lap) p_r = mean of children, (I - dt Lap)(Y_r + g_r) = child difference / (2 sqrt dt),
    y_r = (1 - dt a1) p_r - dt (a2 Y_r + f_r), y = yT on the last level.
    """
    dt, sq = T / K, np.sqrt(T / K)
    n = n_nodes(K)
    nr = 2**K - 1
    D = N * (n + 2 * nr)
    A = np.zeros((D, D))
    b = np.zeros(D)
    I = np.eye(N)
    R = I - dt * lap(N, L)
    y = lambda r: slice(r * N, (r + 1) * N)  # noqa: E731
    Yb = lambda r: slice((n + r) * N, (n + r + 1) * N)  # noqa: E731
    P = lambda r: slice((n + nr + r) * N, (n + nr + r + 1) * N)  # noqa: E731
    for r in range(nr, n):
        A[y(r), y(r)] = I
        if yT is not None:
            b[y(r)] = yT[r - nr]
    for r in range(nr):
        up, dn = children(r)
        A[P(r), P(r)] = R
        A[P(r), y(up)] = -0.5 * I
        A[P(r), y(dn)] = -0.5 * I
        A[Yb(r), Yb(r)] = R
        A[Yb(r), y(up)] = -I / (2 * sq)
        A[Yb(r), y(dn)] = I / (2 * sq)
        if g is not None:
            b[Yb(r)] = -R @ g[r]
        A1, A2 = _coef(a1, r, N), _coef(a2, r, N)
        A[y(r), y(r)] = I
        A[y(r), P(r)] = -np.diag(1.0 - dt * A1)
        A[y(r), Yb(r)] = np.diag(dt * A2)
        if f is not None:
            b[y(r)] = -dt * f[r]
    sol = np.linalg.solve(A, b)
    yy = sol[: n * N].reshape(n, N)
    YY = np.zeros((n, N))
    PP = np.zeros((n, N))
    YY[:nr] = sol[n * N : (n + nr) * N].reshape(nr, N)
    PP[:nr] = sol[(n + nr) * N :].reshape(nr, N)
    return yy, YY, PP


def row_weights(K, T, h):
    dt = T / K
    return np.array([dt * h * 2.0 ** -level_of(r) for r in range(2**K - 1)])


def brute_space_time(K, T, h, X, Y):
    """E sum_k dt <X_k, Y_k>_h by enumerating every path."""
    dt = T / K
    tot = 0.0
    for _, nodes in paths(K):
        for k in range(K):
            r = nodes[k]
            tot += dt * h * float(X[r] @ Y[r])
    return tot / 2**K


def probe_matrix(fun, dim):
    """Dense matrix of a linear map by unit-vector probing."""
    cols = []
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        cols.append(np.ravel(fun(e)))
    return np.array(cols).T


class DenseForwardGame:
    """Dense Nash oracle for the forward game: stack all follower controls, solve stationarity."""

    def __init__(self, K, N, T, a1, a2, G0, followers, L=1.0):
        self.K, self.N, self.T, self.a1, self.a2, self.L = K, N, T, a1, a2, L
        self.G0 = G0
        self.fol = followers  # list of dicts: G, O, alpha, beta
        self.nr = 2**K - 1
        self.h = L / (N + 1)
        self.w = np.repeat(row_weights(K, T, self.h), N)

    def state(self, y0=None, f=None, g=None):
        return forward_dense(self.K, self.N, self.T, self.a1, self.a2, y0, f, g, self.L)

    def lam(self, i):
        G = self.fol[i]["G"]

        def fun(v):
            f = np.zeros((n_nodes(self.K), self.N))
            f[: self.nr] = v.reshape(self.nr, self.N) * G
            return self.state(None, f)[: self.nr]

        return probe_matrix(fun, self.nr * self.N)

    def solve(self, y0, u1, u2, targets):
        m = len(self.fol)
        f = np.zeros((n_nodes(self.K), self.N))
        f[: self.nr] = u1 * self.G0
        g = np.zeros_like(f)
        g[: self.nr] = u2
        q = self.state(y0, f, g)[: self.nr].ravel()
        Ls = [self.lam(i) for i in range(m)]
        n = self.nr * self.N
        A = np.zeros((m * n, m * n))
        rhs = np.zeros(m * n)
        W = np.diag(self.w)
        for i, fo in enumerate(self.fol):
            O = np.diag(np.tile(fo["O"], self.nr))
            Gm = np.diag(np.tile(fo["G"], self.nr))
            for j in range(m):
                A[i * n : (i + 1) * n, j * n : (j + 1) * n] = fo["alpha"] * Gm @ Ls[i].T @ W @ O @ Ls[j]
            A[i * n : (i + 1) * n, i * n : (i + 1) * n] += fo["beta"] * W @ Gm + (np.eye(n) - Gm)
            rhs[i * n : (i + 1) * n] = -fo["alpha"] * Gm @ Ls[i].T @ W @ O @ (q - targets[i].ravel())
        v = np.linalg.solve(A, rhs)
        return [v[i * n : (i + 1) * n].reshape(self.nr, self.N) for i in range(m)]


class DenseBackwardGame(DenseForwardGame):
    """Backward game: the state pair (stage, Y) enters the follower costs."""

    def state(self, yT=None, f=None, g=None):
        return backward_dense(self.K, self.N, self.T, self.a1, self.a2, yT, f, g, self.L)

    def lam(self, i):
        G = self.fol[i]["G"]

        def fun(v):
            f = np.zeros((n_nodes(self.K), self.N))
            f[: self.nr] = v.reshape(self.nr, self.N) * G
            _, Y, P = self.state(None, f)
            return np.concatenate([P[: self.nr].ravel(), Y[: self.nr].ravel()])

        return probe_matrix(fun, self.nr * self.N)

    def solve(self, yT, u1, u2, targets, targets_Y):
        m = len(self.fol)
        f = np.zeros((n_nodes(self.K), self.N))
        f[: self.nr] = u1 * self.G0
        g = np.zeros_like(f)
        g[: self.nr] = u2
        _, Y, P = self.state(yT, f, g)
        q = np.concatenate([P[: self.nr].ravel(), Y[: self.nr].ravel()])
        Ls = [self.lam(i) for i in range(m)]
        n = self.nr * self.N
        A = np.zeros((m * n, m * n))
        rhs = np.zeros(m * n)
        W = np.diag(self.w)
        W2 = np.diag(np.concatenate([self.w, self.w]))
        for i, fo in enumerate(self.fol):
            Om = np.diag(np.concatenate([fo["alpha"] * np.tile(fo["O"], self.nr), fo["alpha_t"] * np.tile(fo["Ot"], self.nr)]))
            Gm = np.diag(np.tile(fo["G"], self.nr))
            for j in range(m):
                A[i * n : (i + 1) * n, j * n : (j + 1) * n] = Gm @ Ls[i].T @ W2 @ Om @ Ls[j]
            A[i * n : (i + 1) * n, i * n : (i + 1) * n] += fo["beta"] * W @ Gm + (np.eye(n) - Gm)
            tgt = np.concatenate([targets[i].ravel(), targets_Y[i].ravel()])
            rhs[i * n : (i + 1) * n] = -Gm @ Ls[i].T @ W2 @ Om @ (q - tgt)
        v = np.linalg.solve(A, rhs)
        return [v[i * n : (i + 1) * n].reshape(self.nr, self.N) for i in range(m)]


def forward_control_map(game_oracle: DenseForwardGame, y0, targets):
    """Affine map (u1, u2) -> y(T) with followers at their Nash response, as (matrix, offset)."""
    o = game_oracle
    nr, N, K = o.nr, o.N, o.K
    zero = np.zeros((nr, N))

    def endpoint(u1, u2, y0_, tg):
        vs = o.solve(y0_, u1, u2, tg)
        f = np.zeros((n_nodes(K), N))
        f[:nr] = u1 * o.G0 + sum(v * fo["G"] for v, fo in zip(vs, o.fol))
        g = np.zeros_like(f)
        g[:nr] = u2
        return o.state(y0_, f, g)[nr:].ravel()

    ztg = [zero] * len(o.fol)
    c = endpoint(zero, zero, y0, targets)

    def lin(u):
        return endpoint(u[: nr * N].reshape(nr, N), u[nr * N :].reshape(nr, N), None, ztg)

    return probe_matrix(lin, 2 * nr * N), c
