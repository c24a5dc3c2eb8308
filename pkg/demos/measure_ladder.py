"""mu^eps((1, 2]) along an eps ladder, with the eps^d extrapolation.

    python3 demos/measure_ladder.py [n_paths]
"""

import sys

import numpy as np

from sleboundary.flow import DriverRecord, FlowConfig
from sleboundary.measure import cell_grid, extrapolate, initial_X, mu_eps_mass, run_cells
from sleboundary.params import derive_params
from sleboundary.stats import estimate

n = int(sys.argv[1]) if len(sys.argv) > 1 else 200
p = derive_params(6.0)
ladder = (0.2, 0.1, 0.05, 0.025)
grid = cell_grid([(1.0, 2.0, 320)])
I = (1.0, 2.0)

mass = np.zeros((n, len(ladder)))
for i in range(n):
    c = run_cells(p, FlowConfig(), grid, DriverRecord(2, i), ladder)
    mass[i] = [mu_eps_mass(c, j, I).mass for j in range(len(ladder))]

ests = [estimate(mass[:, j]) for j in range(len(ladder))]
for e, est in zip(ladder, ests):
    print(f"eps={e:<6} E[mu^eps(I)] = {est.mean:.4f} +- {est.stderr:.4f}")
lim = extrapolate(ladder, [e.mean for e in ests], [e.stderr for e in ests], p.d)
print(f"extrapolated {lim.mean:.4f} +- {lim.stderr:.4f}, reference {initial_X(I, p):.4f}")
