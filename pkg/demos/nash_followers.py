# the followers' Nash equilibrium for a fixed leader control: GMRES on the
# operator equation vs the coupled optimality system, then a deviation check

import numpy as np

from snlab.game import FORWARD, GameData
from snlab.nash import coercivity_probe, solve_nash, verify_nash
from snlab.optimality import nash_controls, solve_coupled
from snlab.pipelines import leader_controls
from snlab.scenario import default_scenario_path, load_scenario

sc = load_scenario(default_scenario_path())
game = sc.game()
u1, u2 = leader_controls(sc, game)
tg, _ = sc.follower_targets(direction=FORWARD)
data = GameData(u1, u2, sc.y0(), tg)

sol = solve_nash(game, data, FORWARD)
print(f"GMRES iterations {sol.iterations}, stationarity residuals {np.max(sol.residuals):.1e}")

st = solve_coupled(game, "fwd-primal", data)
vc = nash_controls(game, st)
gap = max(np.linalg.norm(a.running - b.running) / np.linalg.norm(b.running) for a, b in zip(vc, sol.controls))
print(f"coupled system: {st.sweeps} sweeps ({st.method}), gap to GMRES {gap:.1e}")

ver = verify_nash(sol, game, data)
print(f"no profitable unilateral deviation: {ver['no_profitable_deviation']}")

probe = coercivity_probe(game.with_betas([1.0, 1.0]), [1.0, 5.0, 25.0])
for b, lam in probe["table"]:
    print(f"beta={b:5.1f}  lambda_min={lam:.6f}")
