import math

import numpy as np
import pytest

from sleboundary.flow import ContractError, DriverRecord, FlowConfig, FlowState, run_flow
from sleboundary.params import derive_params
from sleboundary.trace import koebe_check, sample_trace, tip_at, tip_at_step

K6 = derive_params(6.0)


def _zero_driver(n=200, dt=1e-2):
    return DriverRecord(0, 0, np.full(n, dt), np.zeros(n))


def test_tip_at_zero_is_origin():
    rec = run_flow(K6, FlowConfig(t_max=1.0), np.array([1.0]), DriverRecord(1, 1), record_steps=True).driver
    assert tip_at_step(rec, 0, K6) == 0j
    assert tip_at(rec, 0.0, K6) == 0j


def test_vertical_slit():
    rec = _zero_driver()
    for k in (1, 50, 200):
        z = tip_at_step(rec, k, K6)
        t = k * 1e-2
        assert abs(z.real) < 1e-12
        assert abs(z) ** 2 == pytest.approx(2 * K6.a * t, rel=1e-9)


def test_tip_off_grid_time():
    with pytest.raises(ContractError):
        tip_at(_zero_driver(), 0.005, K6)
    with pytest.raises(ContractError):
        tip_at_step(DriverRecord(0, 0), 1, K6)


@pytest.fixture(scope="module")
def recorded():
    xs = np.array([0.5, 1.0, 1.5, 2.0])
    return xs, run_flow(K6, FlowConfig(t_max=2.0), xs, DriverRecord(7, 3), (0.5, 1.0, 2.0), record_steps=True)


def test_trace_upper_half_plane_and_deterministic(recorded):
    _, r = recorded
    a = sample_trace(r.driver, K6, n_tips=128)
    b = sample_trace(r.driver, K6, n_tips=128)
    assert a.tips[0] == 0j
    assert np.all(a.tips.imag >= 0)
    assert np.array_equal(a.tips, b.tips)
    assert a.tips.size <= 128


def test_trace_continuity(recorded):
    # adjacent-step tips differ by about sqrt(dt)
    _, r = recorded
    dt = r.driver.dt
    ks = np.arange(1, min(dt.size, 400), 7)
    jumps = [abs(tip_at_step(r.driver, k + 1, K6) - tip_at_step(r.driver, k, K6)) / math.sqrt(dt[k]) for k in ks]
    assert np.median(jumps) < 10


def test_koebe_at_time_zero():
    xs = np.array([1.0, 2.0])
    s = FlowState(0.0, xs, xs.copy(), np.zeros(2), np.ones(2, bool), np.full(2, np.inf))
    tr = sample_trace(_zero_driver(), K6, t_end=0.0, n_tips=4)
    ratio, slack, dist, _ = koebe_check(s, tr, 0)
    assert ratio == pytest.approx(0.25, rel=1e-15)
    assert slack == 0.0


def test_koebe_bound(recorded):
    xs, r = recorded
    steps = [s.step_index for s in r.snapshots]
    tr = sample_trace(r.driver, K6, t_end=2.0, include_steps=steps)
    for s in r.snapshots:
        for i in np.flatnonzero(s.alive):
            ratio, slack, _, _ = koebe_check(s, tr, i)
            assert ratio <= 1 + slack
    dead = r.snapshots[-1]
    if not dead.alive.all():
        with pytest.raises(ContractError):
            koebe_check(dead, tr, int(np.argmin(dead.alive)))
