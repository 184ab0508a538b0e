import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from snlab.game import Follower, Game
from snlab.grid import SpatialGrid, make_mask, whole_mask
from snlab.lattice import build_tree

settings.register_profile("snlab", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("snlab")


def make_game(K=3, N=5, T=0.2, a1=0.0, a2=0.0, m=1, G0=(2, 4), beta=10.0, alpha=1.0,
              alpha_t=0.0, whole_Ot=False, controls=None, observe=None):
    tree = build_tree(T, K)
    sp = SpatialGrid(1.0, N)
    controls = controls or ([(1, N)] if m == 1 else [(1, N // 2), (N - N // 2 + 1, N)])
    observe = observe or (1, N)
    fol = []
    for i in range(m):
        Ot = whole_mask(sp) if whole_Ot else None
        fol.append(Follower(make_mask(sp, controls[i]), make_mask(sp, observe), alpha=alpha, beta=beta,
                            Ot=Ot, alpha_t=alpha_t))
    return Game(tree, sp, make_mask(sp, G0), fol, a1=a1, a2=a2)


def random_running(game, rng, mask=None):
    f = game.zeros()
    f.running[:] = rng.standard_normal(f.running.shape)
    if mask is not None:
        f.running[:] *= mask
    return f


def default_game(bwd=False, K=8, N=21, G0=(8, 14)):
    """The shipped scenario's geometry: two followers, shared observation region."""
    tree = build_tree(0.2, K)
    sp = SpatialGrid(1.0, N)
    Od = make_mask(sp, (6, 16))
    kw = dict(Ot=whole_mask(sp), alpha_t=1.0)
    fol = [Follower(make_mask(sp, (3, 8)), Od, alpha=1.0, beta=100.0, **kw),
           Follower(make_mask(sp, (14, 19)), Od, alpha=1.0, beta=100.0, **kw)]
    return Game(tree, sp, make_mask(sp, G0), fol, a1=2.0, a2=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def oracle_spec(game):
    """Follower dicts for the dense oracles."""
    return [dict(G=f.G, O=f.O, alpha=f.alpha, beta=f.beta, Ot=f.Ot, alpha_t=f.alpha_t) for f in game.followers]


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    d = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if d == 0 else float(np.linalg.norm(a - b) / d)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
