# drive the forward stochastic heat state to an eps-ball around zero with the leader,
# followers playing their Nash response; shows how the cost grows as eps shrinks

from snlab.hum import certify, controlled_state, minimize
from snlab.pipelines import hum_problem, level_energy
from snlab.scenario import default_scenario_path, load_scenario

sc = load_scenario(default_scenario_path())
game = sc.game()
tree, h = game.tree, game.space.h

print(f"lattice K={tree.K}, dt={tree.dt:.4g}, grid N={game.space.N}, followers m={game.m}")

for eps in (1e-1, 1e-2, 1e-3):
    pr = hum_problem(sc, "null", epsilon=eps)
    res = minimize(pr)
    rep = certify(pr, res)
    print(f"eps={eps:g}: |y(T)|={res.achieved:.3e}  cost={res.cost:.4f}  ratio={rep['cost_ratio']:.3f}"
          f"  iters={res.iterations}  nash residual={rep['nash_residual']:.1e}")

# energy per level of the controlled state for the last eps
u1, u2 = res.controls
st = controlled_state(pr, u1, u2)
E = level_energy(tree, h, st.y.data)
for k in range(0, tree.K + 1, 2):
    print(f"  t={k * tree.dt:.3f}  E|y|^2={E[k]:.3e}")
