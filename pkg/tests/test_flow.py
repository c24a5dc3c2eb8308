import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sleboundary.flow import (
    ContractError, DriverRecord, FlowConfig, FlowState, compute_Y, crossing_times, death_time, restart_flow,
    run_flow, simulate_q_process, swallow_order,
)
from sleboundary.params import derive_params
from sleboundary.specfun import survival_probability, swallow_survival

K6 = derive_params(6.0)
XS = np.array([0.5, 1.0, 1.1, 1.5, 2.0, 3.0])


def _zero_noise(params, x, n_steps, dt=1e-2):
    """Deterministic flow from a hand-made record with dB = 0 and dt = dt_max."""
    state = FlowState(0.0, np.array([x]), np.array([x]), np.zeros(1), np.ones(1, bool), np.full(1, np.inf), 0)
    rec = DriverRecord(0, 0, np.full(n_steps, dt), np.zeros(n_steps))
    snaps, _ = restart_flow(params, FlowConfig(dt_max=dt), state, rec, at_steps=[n_steps])
    return snaps[0]


def test_zero_noise_closed_form():
    s = _zero_noise(K6, 1.0, 400)
    t = s.t
    assert t == pytest.approx(4.0, rel=1e-12)
    # h^2 = 1 + 2at and h' = (1 + 2at)^(-1/2), to Euler order dt
    assert s.h[0] == pytest.approx(math.sqrt(1 + 2 * K6.a * t), rel=1e-3)
    assert s.log_hp[0] == pytest.approx(-0.5 * math.log(1 + 2 * K6.a * t), rel=1e-2)


def test_zero_noise_first_order():
    exact = math.sqrt(1 + 2 * K6.a * 4.0)
    e1 = abs(_zero_noise(K6, 1.0, 400, 1e-2).h[0] - exact)
    e2 = abs(_zero_noise(K6, 1.0, 800, 5e-3).h[0] - exact)
    assert e2 / e1 == pytest.approx(0.5, abs=0.1)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 10 ** 6))
def test_snapshot_invariants(seed, pid):
    r = run_flow(K6, FlowConfig(t_max=50.0), XS, DriverRecord(seed, pid), (0.1, 0.5, 1.0, 2.0, 8.0))
    prev = np.zeros(XS.size)
    for s in r.snapshots:
        h = s.h[s.alive]
        assert np.all(np.diff(h) > 0)
        assert np.all(h > 0)
        assert np.all(s.log_hp[s.alive] <= 0)
        assert np.all(s.log_hp[s.alive] <= prev[s.alive])
        prev = np.where(s.alive, s.log_hp, prev)
        # the dead part is a prefix of the grid
        assert np.all(np.diff(s.alive.astype(int)) >= 0)
    T = r.swallow_time
    assert np.all(np.diff(T[np.isfinite(T)]) >= 0)
    o = swallow_order(r)
    assert np.all(np.diff(o[np.isfinite(o)]) >= 0)


def test_bit_replay():
    a = run_flow(K6, FlowConfig(), XS, DriverRecord(11, 3), (1.0,), (0.1,))
    b = run_flow(K6, FlowConfig(), XS, DriverRecord(11, 3), (1.0,), (0.1,))
    assert np.array_equal(a.swallow_time, b.swallow_time)
    assert np.array_equal(a.snapshots[0].h, b.snapshots[0].h)
    assert np.array_equal(a.eps_cross, b.eps_cross, equal_nan=True)
    c = run_flow(K6, FlowConfig(), XS, DriverRecord(11, 4), (1.0,))
    assert not np.array_equal(a.swallow_time, c.swallow_time)


def test_swallowing_law_and_horizon():
    # x^2 / (2 T_x) is Gamma(1/2 - a): survival at 100 x^2 is far from 0 (0.445 at
    # kappa = 6), but every point dies in finite time and the default horizon
    # leaves well under 1% alive
    n = 1000
    alive_mid = np.zeros(XS.size)
    alive_end = 0
    for i in range(n):
        r = run_flow(K6, FlowConfig(t_max=100.0), XS, DriverRecord(5, i))
        alive_mid += ~np.isfinite(r.swallow_time)
        alive_end += int(np.sum(~np.isfinite(run_flow(K6, FlowConfig(), XS, DriverRecord(6, i)).swallow_time)))
    ref = swallow_survival(K6, XS, 100.0)
    se = np.sqrt(ref * (1 - ref) / n)
    assert np.all(np.abs(alive_mid / n - ref) <= 3 * se + 0.02)
    assert alive_end / (n * XS.size) < 0.01


def test_scaling_of_swallow_time():
    # T_{2x} has the law of 4 T_x (independent samples).  Without the dt_max cap
    # the step rule is exactly scale free; T_x is heavy tailed, so both samples
    # are censored at the same horizon.
    n, horizon = 10_000, 1e12
    cfg = FlowConfig(dt_max=1e300)
    t1 = np.array([death_time(K6.a, 1.0, horizon, cfg, DriverRecord(1, i)) for i in range(n)])
    t2 = np.array([death_time(K6.a, 2.0, horizon, cfg, DriverRecord(2, i)) for i in range(n)])
    assert stats.ks_2samp(np.minimum(4 * t1, horizon), np.minimum(t2, horizon)).pvalue > 0.01


def test_simultaneous_swallowing():
    n = 10_000
    same = 0
    for i in range(n):
        o = swallow_order(run_flow(K6, FlowConfig(), np.array([1.0, 1.1]), DriverRecord(9, i)))
        same += o[0] == o[1]
    assert same / n > 0.05


# --------------------------------------------------------------------------
# restart


def _recorded(seed=3, pid=1):
    return run_flow(K6, FlowConfig(t_max=3.0), XS, DriverRecord(seed, pid), (1.0, 3.0), record_steps=True)


def test_restart_identity():
    r = _recorded()
    s1 = r.snapshots[0]
    snaps, _ = restart_flow(K6, FlowConfig(t_max=3.0), s1, r.driver, at_steps=[0])
    sel = s1.alive
    assert np.array_equal(snaps[0].h, s1.h[sel])
    assert np.all(snaps[0].log_hp == 0.0)


@pytest.mark.parametrize("pid", range(6))
def test_restart_commutes(pid):
    r = _recorded(3, pid)
    s1, s3 = r.snapshots
    snaps, _ = restart_flow(K6, FlowConfig(t_max=3.0), s1, r.driver, at_steps=[s3.step_index - s1.step_index])
    sr = snaps[0]
    sel = np.flatnonzero(s1.alive)
    assert np.array_equal(sr.alive, s3.alive[sel])
    a = sr.alive
    assert np.array_equal(sr.h[a], s3.h[sel][a])
    lm_r = K6.beta * (sr.log_hp[a] - np.log(sr.h[a]) + s1.log_hp[sel][a])
    lm_d = K6.beta * (s3.log_hp[sel][a] - np.log(s3.h[sel][a]))
    assert np.all(np.abs(np.expm1(lm_r - lm_d)) <= 1e-12)


def test_restart_rejects_foreign_suffix():
    r = _recorded()
    other = _recorded(4, 1)
    with pytest.raises(ContractError):
        restart_flow(K6, FlowConfig(t_max=3.0), r.snapshots[0], other.driver, at_steps=[10])
    with pytest.raises(ContractError):
        restart_flow(K6, FlowConfig(), r.snapshots[0], DriverRecord(3, 1), at_steps=[1])


# --------------------------------------------------------------------------
# config and inputs


@pytest.mark.parametrize("kw", [
    {"dt_max": 0.0}, {"dt_scale": 0.0}, {"dt_scale": 0.2}, {"kill_threshold": 0.0}, {"t_max": -1.0},
])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        FlowConfig(**kw)


@pytest.mark.parametrize("xs", [[1.0, 1.0], [2.0, 1.0], [0.0, 1.0], [-1.0]])
def test_points_must_be_increasing_positive(xs):
    with pytest.raises((ValueError, ContractError)):
        run_flow(K6, FlowConfig(), xs, DriverRecord(0, 0))


# --------------------------------------------------------------------------
# Y and crossings


def test_compute_Y():
    pts = np.array([0.5, 1.25, 1.5, 2.0])
    s0 = FlowState(0.0, pts, pts.copy(), np.zeros(4), np.ones(4, bool), np.full(4, np.inf))
    assert compute_Y(s0, (1.0, 2.0)) == 1.25
    dead = FlowState(1.0, pts, pts.copy(), np.zeros(4), np.zeros(4, bool), np.zeros(4))
    assert compute_Y(dead, (1.0, 2.0)) == 0.0
    with pytest.raises(ContractError):
        compute_Y(s0, (3.0, 4.0))


def test_crossing_times_examples():
    eps = 0.1
    t = np.linspace(0, 1, 101)
    assert crossing_times(t, np.full(101, 1.0), eps).size == 0
    y = np.linspace(3 * eps, 0, 101)
    ct = crossing_times(t, y, eps)
    assert ct.size == 1 and y[np.searchsorted(t, ct[0])] <= eps


def test_crossing_times_alternate():
    t = np.arange(8.0)
    y = np.array([1.0, 0.05, 0.15, 0.3, 0.08, 0.5, 0.02, 0.0])
    assert crossing_times(t, y, 0.1).tolist() == [1.0, 3.0, 4.0, 5.0, 6.0]


def test_Y_continuity():
    # largest step-to-step jump of Y stays within the driver's modulus for most paths
    dt_max = 1e-2
    bound = 4 * math.sqrt(dt_max) * math.log(1 / dt_max)
    obs = np.arange(1, 201) * dt_max
    ok = 0
    for i in range(100):
        r = run_flow(K6, FlowConfig(dt_max=dt_max, t_max=2.0), np.linspace(1.0, 2.0, 21)[1:], DriverRecord(8, i), obs)
        y = [compute_Y(s, (1.0, 2.0)) for s in r.snapshots]
        ok += np.max(np.abs(np.diff(y))) <= bound
    assert ok >= 99


# --------------------------------------------------------------------------
# Q-process


def test_q_process_short_time():
    assert all(simulate_q_process(K6, 1.0, 1e-4, FlowConfig(), DriverRecord(1, i)) for i in range(50))


def test_q_process_scaling():
    n = 3000
    cfg = FlowConfig()
    s1 = np.mean([simulate_q_process(K6, 1.0, 1.0, cfg, DriverRecord(21, i)) for i in range(n)])
    s2 = np.mean([simulate_q_process(K6, 2.0, 4.0, cfg, DriverRecord(22, i)) for i in range(n)])
    ref = survival_probability(K6, 1.0, 1.0)
    se = math.sqrt(ref * (1 - ref) / n)
    assert abs(s1 - s2) < 3 * math.sqrt(2) * se + 0.01
    assert abs(s1 - ref) < 3 * se + 0.01
