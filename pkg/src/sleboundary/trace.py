"""Approximate curve tips from a recorded driver.

The driver is held constant over each integration step.  One step of the
Loewner flow with constant driver u maps ``(g - u)^2`` to ``(g - u)^2 + 2 a dt``,
so the tip at step n is found by running the inverse steps from the last
held driver value back to time 0.  Each tip costs O(n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .flow import ContractError, DriverRecord, FlowState
from .params import SleParams

MAX_TIPS = 512


@dataclass
class TraceApprox:
    t: np.ndarray
    tips: np.ndarray     # complex
    steps: np.ndarray

    def max_gap(self) -> float:
        if self.tips.size < 2:
            return 0.0
        return float(np.abs(np.diff(self.tips)).max())


def _held_driver(driver: DriverRecord) -> np.ndarray:
    # value held during step k is U at the start of step k
    return driver.driver_values()[:-1]


def tip_at_step(driver: DriverRecord, n_steps: int, params: SleParams) -> complex:
    if not driver.has_steps:
        raise ContractError("driver record carries no steps")
    if not 0 <= n_steps <= driver.dt.size:
        raise ContractError(f"step {n_steps} outside the record")
    return complex(K.loewner_tip(driver.dt, _held_driver(driver), int(n_steps), params.a))


def tip_at(driver: DriverRecord, t: float, params: SleParams) -> complex:
    """Tip at a time on the step grid (the grid time closest to ``t``)."""
    times = driver.times()
    k = int(np.argmin(np.abs(times - t)))
    if not np.isclose(times[k], t, rtol=1e-12, atol=1e-15):
        raise ContractError(f"t={t} is not on the step grid")
    return tip_at_step(driver, k, params)


def sample_trace(driver: DriverRecord, params: SleParams, t_end: float | None = None, n_tips: int = MAX_TIPS, include_steps=()) -> TraceApprox:
    """Tips at up to ``n_tips`` steps spread evenly in time over [0, t_end].

    ``include_steps`` (e.g. snapshot step indices) are always sampled and
    count towards ``n_tips``.
    """
    if n_tips > MAX_TIPS:
        raise ValueError(f"at most {MAX_TIPS} tips per path")
    extra = np.unique(np.asarray(include_steps, dtype=np.int64))
    times = driver.times()
    if t_end is None:
        t_end = times[-1]
    last = int(np.searchsorted(times, t_end, side="right")) - 1
    extra = extra[(extra >= 0) & (extra <= last)]
    targets = np.linspace(0.0, times[last], max(n_tips - extra.size, 2))
    steps = np.clip(np.searchsorted(times[: last + 1], targets), 0, last)
    steps = np.unique(np.concatenate([steps, extra, [0, last]]))
    if steps.size > n_tips:
        keep = np.isin(steps, extra) | (steps == 0) | (steps == last)
        drop = np.flatnonzero(~keep)[: steps.size - n_tips]
        steps = np.delete(steps, drop)
    held = _held_driver(driver)
    tips = np.array([K.loewner_tip(driver.dt, held, int(s), params.a) for s in steps])
    return TraceApprox(times[steps], tips, steps)


def koebe_check(state: FlowState, trace: TraceApprox, i: int):
    """Distance ratio for grid point ``i`` at a snapshot.

    Returns ``(ratio, slack, dist, gap)`` with ``ratio = dist(x, tips u dead
    segment) / (4 h / h')`` and ``slack = 2 gap / (4 h / h')``, where ``gap``
    is the largest distance between consecutive tips up to the snapshot.
    The bound holds when ``ratio <= 1 + slack``.
    """
    if not state.alive[i]:
        raise ContractError("point is not alive")
    x = state.points[i]
    scale = 4.0 * state.h[i] / np.exp(state.log_hp[i])
    tips = trace.tips[trace.t <= state.t * (1 + 1e-12)]
    gap = float(np.abs(np.diff(tips)).max()) if tips.size > 1 else 0.0
    dist = float(np.abs(tips - x).min()) if tips.size else abs(x)
    dead = ~state.alive
    if dead.any():
        lo, hi = state.points[dead].min(), state.points[dead].max()
        seg = 0.0 if lo <= x <= hi else min(abs(x - lo), abs(x - hi))
        dist = min(dist, seg)
    return dist / scale, 2.0 * gap / scale, dist, gap
