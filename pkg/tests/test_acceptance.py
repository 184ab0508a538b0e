"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the terminal summary.
"""

import copy
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, make_game, oracle_spec, random_running, rel
from oracles import DenseBackwardGame, DenseForwardGame
from snlab.carleman import backward_assumptions
from snlab.cli import main
from snlab.game import BACKWARD, FORWARD, GameData
from snlab.hum import eval_functional
from snlab.nash import solve_nash, verify_nash
from snlab.optimality import duality_sides, nash_controls, solve_coupled
from snlab.pipelines import (
    cost_ratio_study,
    hum_problem,
    leader_controls,
    run_coercivity,
    run_hum,
    run_observability,
    weight_checks,
)
from snlab.scenario import default_scenario_path, from_dict, load_scenario

pytestmark = pytest.mark.acceptance


def report(n, name, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def sc():
    return load_scenario(default_scenario_path())


def _direction(sc, direction, **goal):
    raw = copy.deepcopy(sc.raw)
    raw["goal"].update(direction=direction, **goal)
    return from_dict(raw)


def test_c01_duality_identities(sc):
    game = sc.game()
    assert game.tree.K == 8 and game.space.N == 21 and game.m == 2
    rng = np.random.default_rng(2024)
    tree, N = game.tree, game.space.N
    worst = {}
    t0 = time.perf_counter()
    for direction in (FORWARD, BACKWARD):
        gaps = []
        for _ in range(100):
            u1 = random_running(game, rng, game.G0)
            u2 = random_running(game, rng)
            tg = [random_running(game, rng) for _ in range(2)]
            if direction == FORWARD:
                data = GameData(u1, u2, rng.standard_normal(N), tg)
                adj = rng.standard_normal((2**tree.K, N))
            else:
                tY = [random_running(game, rng) for _ in range(2)]
                data = GameData(u1, u2, rng.standard_normal((2**tree.K, N)), tg, tY)
                adj = rng.standard_normal(N)
            lhs, rhs = duality_sides(game, direction, data, adj)
            gaps.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
        worst[direction] = max(gaps)
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-10 and secs <= 60
    report(1, "duality identities", ok,
           f"max rel gap fwd {worst[FORWARD]:.2e} bwd {worst[BACKWARD]:.2e}, {secs:.1f} s (<= 1e-10, <= 60 s)")


def test_c02_nash_oracle_equivalence():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst_qp = worst_char = 0.0
    for direction in (FORWARD, BACKWARD):
        for m in (1, 2):
            game = make_game(K=4, N=5, T=0.2, a1=1.0, a2=0.5, m=m, G0=(2, 4), beta=2.0, alpha_t=1.0, whole_Ot=True)
            u1, u2 = random_running(game, rng, game.G0), random_running(game, rng)
            tg = [random_running(game, rng) for _ in range(m)]
            args = (4, 5, 0.2, 1.0, 0.5, game.G0, oracle_spec(game))
            if direction == FORWARD:
                data = GameData(u1, u2, rng.standard_normal(5), tg)
                ref = DenseForwardGame(*args).solve(data.datum, u1.running, u2.running, [t.running for t in tg])
                system = "fwd-primal"
            else:
                tY = [random_running(game, rng) for _ in range(m)]
                data = GameData(u1, u2, rng.standard_normal((16, 5)), tg, tY)
                ref = DenseBackwardGame(*args).solve(data.datum, u1.running, u2.running,
                                                     [t.running for t in tg], [t.running for t in tY])
                system = "bwd-primal"
            sol = solve_nash(game, data, direction, rtol=1e-12)
            coupled = nash_controls(game, solve_coupled(game, system, data, tol=1e-13))
            for v, r, c in zip(sol.controls, ref, coupled):
                worst_qp = max(worst_qp, rel(v.running, r))
                worst_char = max(worst_char, rel(v.running, c.running))
            worst_char = max(worst_char, sol.characterization_gap)
    secs = time.perf_counter() - t0
    ok = worst_qp <= 1e-8 and worst_char <= 1e-8 and secs <= 10
    report(2, "Nash oracle equivalence", ok,
           f"vs dense QP {worst_qp:.2e}, vs adjoint characterization {worst_char:.2e}, {secs:.1f} s")


def test_c03_nash_stationarity(sc):
    worst = 0.0
    for direction in (FORWARD, BACKWARD):
        game = sc.game()
        u1, u2 = leader_controls(sc, game)
        tg, tY = sc.follower_targets(direction=direction)
        # unscaled random targets so the mismatch terms are not negligible
        tg = [random_running(game, np.random.default_rng(i)) for i in range(2)]
        datum = sc.y0() if direction == FORWARD else sc.yT()
        data = GameData(u1, u2, datum, tg, tY if direction == BACKWARD else None)
        sol = solve_nash(game, data, direction)
        ver = verify_nash(sol, game, data, n_directions=10, seed=3)
        worst = max(worst, max(ver["fd_scaled"]))
    report(3, "Nash stationarity", worst <= 1e-6, f"max |dJ_i|/(1+|v*|) = {worst:.2e} (<= 1e-6)")


def test_c04_coercivity_scan(sc):
    parts, ok = [], True
    for direction in (FORWARD, BACKWARD):
        out = run_coercivity(_direction(sc, direction))
        s = out.summary
        ok = ok and out.passed and s["beta_bar"] is not None and np.isfinite(s["beta_bar"])
        parts.append(f"{direction}: beta_bar={s['beta_bar']}, nondecreasing={s['nondecreasing']}, "
                     f"alpha=0 exact={s['alpha_zero_returns_beta']}")
    report(4, "coercivity scan", ok, "; ".join(parts))


def _null_contract(sc, direction, n):
    sc = _direction(sc, direction)
    if direction == BACKWARD:
        assert backward_assumptions(sc.game()) == []
    lines, ok = [], True
    for eps in (1e-1, 1e-2, 1e-3):
        t0 = time.perf_counter()
        st = cost_ratio_study(sc, eps, 20)
        secs = time.perf_counter() - t0
        good = st["all_goals_met"] and st["max_relative_spread"] <= 0.2 and secs <= 300
        ok = ok and good
        lines.append(f"eps={eps:g}: max achieved {max(st['achieved']):.3e}, ratio median {st['median_ratio']:.3g} "
                     f"spread {st['max_relative_spread']:.1%}, {secs:.0f} s")
    name = "forward null control" if direction == FORWARD else "backward null control"
    report(n, name, ok, "; ".join(lines))


def test_c05_forward_null_control(sc):
    _null_contract(sc, FORWARD, 5)


def test_c06_backward_null_control(sc):
    _null_contract(sc, BACKWARD, 6)


def test_c07_approximate_control(sc):
    parts, ok = [], True
    for direction in (FORWARD, BACKWARD):
        out = run_hum(_direction(sc, direction, type="approximate"), "approximate")
        s = out.summary
        good = s["achieved"] <= s["epsilon"] and s["cost"] <= s["constructive_cost_bound"] + 1e-6
        ok = ok and good
        parts.append(f"{direction}: achieved {s['achieved']:.3e} <= {s['epsilon']:g}, "
                     f"cost {s['cost']:.3e} <= bound {s['constructive_cost_bound']:.3e}")
    report(7, "approximate control", ok, "; ".join(parts))


def test_c08_hum_gradient(sc):
    worst = 0.0
    for direction in (FORWARD, BACKWARD):
        s = _direction(sc, direction, type="approximate")
        pr = hum_problem(s, "approximate")
        rng = np.random.default_rng(11)
        if direction == FORWARD:
            pr.yT = rng.standard_normal(pr.shape)
        else:
            pr.y0 = rng.standard_normal(pr.shape)
        for _ in range(5):
            x = rng.standard_normal(pr.shape)
            g = eval_functional(pr, x).gradient
            for _ in range(10):
                d = rng.standard_normal(pr.shape)
                step = 1e-3 * pr.norm(x) / pr.norm(d)
                fd = (eval_functional(pr, x + step * d).smooth - eval_functional(pr, x - step * d).smooth) / (2 * step)
                an = pr.inner(g, d)
                worst = max(worst, abs(fd - an) / abs(an))
    report(8, "HUM gradient check", worst <= 1e-6, f"max relative error {worst:.2e} over 2 x 5 x 10 (<= 1e-6)")


def test_c09_weight_family(sc):
    checks = weight_checks(sc)
    flat = {k: v for k, v in checks.items() if isinstance(v, bool) and k != "all"}
    flat.update({f"eta0.{k}": v for k, v in checks["eta0"].items()})
    bad = [k for k, v in flat.items() if not v]
    report(9, "weight family", checks["all"], "all checks hold" if not bad else f"failed: {bad}")


def test_c10_observability_ratio(sc):
    out = run_observability(sc)
    s = out.summary
    ok = (s["direction"] == BACKWARD and np.isfinite(s["C_hat"]) and s["max_relative_spread"] <= 0.3
          and s["nonincreasing_under_enlargement"])
    report(10, "observability ratio", ok,
           f"C_hat {s['C_hat']:.4g}, spread {s['max_relative_spread']:.1e} over 20 starts, "
           f"whole-domain G0 {s['C_hat_whole_domain_control']:.4g}")


COMMANDS = ("nash-solve", "null-control", "approx-control", "exact-control", "duality-check",
            "observability-estimate", "carleman-weights", "coercivity-scan")


def test_c11_determinism(tmp_path):
    path = str(default_scenario_path())
    diffs = []
    for cmd in COMMANDS:
        for run in ("a", "b"):
            main([cmd, "--scenario", path, "--out", str(tmp_path / run / cmd), "--seed", "5"])
        for name in ("timeseries.csv", "controls.csv", "weights.csv"):
            a = (tmp_path / "a" / cmd / name).read_bytes()
            b = (tmp_path / "b" / cmd / name).read_bytes()
            if a != b:
                diffs.append(f"{cmd}/{name}")
    report(11, "determinism", not diffs, f"{len(COMMANDS) * 3} CSVs bitwise identical" if not diffs else f"differ: {diffs}")
