"""One path: the field M_t(x) on a grid, the eps-crossings and a sampled trace.

    python3 demos/field_and_trace.py [seed]
"""

import sys

import numpy as np

from sleboundary.flow import DriverRecord, FlowConfig, run_flow
from sleboundary.martingale import snapshots_M
from sleboundary.params import derive_params
from sleboundary.trace import koebe_check, sample_trace

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
p = derive_params(6.0)
xs = np.linspace(0.25, 3.0, 12)
obs = (0.25, 1.0, 2.0)
r = run_flow(p, FlowConfig(t_max=2.0), xs, DriverRecord(seed, 0), obs, (0.1,), record_steps=True)

for s, m in zip(r.snapshots, snapshots_M(r, p)):
    print(f"t={s.t:.3f} alive={int(s.alive.sum()):2d}  M: " + " ".join(f"{v:.2f}" for v in m.M))
    print(f"{'':18}C_t^0.1: " + "".join("x" if c else "." for c in m.crossed[0]))

tr = sample_trace(r.driver, p, t_end=2.0, n_tips=64, include_steps=[s.step_index for s in r.snapshots])
print(f"trace: {tr.tips.size} tips, final tip {tr.tips[-1]:.3f}, largest gap {tr.max_gap():.3f}")
last = r.snapshots[-1]
worst = max((koebe_check(last, tr, i)[0] for i in np.flatnonzero(last.alive)), default=float("nan"))
print(f"largest Koebe ratio at t={last.t:.3f}: {worst:.3f} (bound 1)")
