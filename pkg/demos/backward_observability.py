# empirical observability constant for the backward adjoint system,
# and how it moves when the leader's control region grows

import numpy as np

from snlab.carleman import estimate_observability_constant, unique_continuation_probe
from snlab.game import BACKWARD
from snlab.grid import make_mask
from snlab.scenario import default_scenario_path, load_scenario

sc = load_scenario(default_scenario_path())
rho_sp = sc.rho(BACKWARD)
print(f"rho on the first and last cell midpoints: {rho_sp.values[0]:.3e}, {rho_sp.values[-1]:.3e}")

base = sc.game()
sp = base.space
for lo, hi in [(8, 14), (6, 16), (2, 20)]:
    game = base.__class__(base.tree, sp, make_mask(sp, (lo, hi)), base.followers, base.a1, base.a2)
    est = estimate_observability_constant(game, BACKWARD, rho_sp, trials=5, steps=200)
    print(f"G0=[{lo},{hi}]  C_hat={est.C_hat:.4f}  spread={np.ptp(est.ratios) / est.C_hat:.1e}")

uc = unique_continuation_probe(base, BACKWARD, trials=3)
print(f"smallest observed energy over unit data: {uc.min_value:.3e}")
