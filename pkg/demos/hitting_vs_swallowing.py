"""Compare Pr(T_1 strictly before T_y) with the closed-form hitting probability.

    python3 demos/hitting_vs_swallowing.py [n_paths]
"""

import sys

import numpy as np

from sleboundary.flow import DriverRecord, FlowConfig, run_flow, swallow_order
from sleboundary.params import derive_params
from sleboundary.specfun import interval_hit_probability
from sleboundary.stats import binomial_estimate

n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
p = derive_params(6.0)
ys = np.array([1.05, 1.1, 1.2, 1.4, 1.5])
xs = np.concatenate([[1.0], ys])
cfg = FlowConfig(kill_threshold=1e-18)
order = np.array([swallow_order(run_flow(p, cfg, xs, DriverRecord(1, i))) for i in range(n)])

print(f"{'y':>5} {'MC':>8} {'stderr':>8} {'F right':>8} {'F left':>8} {'ties':>6}")
for k, y in enumerate(ys, start=1):
    est = binomial_estimate(order[:, 0] < order[:, k])
    tie = np.mean(order[:, 0] == order[:, k])
    print(f"{y:5.2f} {est.mean:8.4f} {est.stderr:8.4f} {interval_hit_probability(p, 1.0, y, 'right'):8.4f} "
          f"{interval_hit_probability(p, 1.0, y, 'left'):8.4f} {tie:6.3f}")
