import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sleboundary.flow import DriverRecord, FlowConfig, FlowState, restart_flow, run_flow
from sleboundary.martingale import compute_M, one_point_mean, snapshots_M, track_stopping, two_point_stats
from sleboundary.params import derive_params

K6 = derive_params(6.0)
XS = np.array([0.5, 1.0, 1.5, 2.0, 3.0])
LADDER = (0.2, 0.1, 0.05)


def _state(t, xs, h, lhp, alive):
    return FlowState(t, np.asarray(xs, float), np.asarray(h, float), np.asarray(lhp, float),
                     np.asarray(alive, bool), np.full(len(xs), np.inf))


def test_initial_field():
    s = compute_M(_state(0.0, XS, XS, np.zeros(XS.size), np.ones(XS.size)), K6)
    assert np.allclose(s.M, XS ** -K6.beta, rtol=1e-15, atol=0)


def test_dead_points_are_zero():
    s = compute_M(_state(1.0, XS, XS, np.zeros(XS.size), [False, False, True, True, True]), K6)
    assert s.M[0] == 0.0 and s.M[1] == 0.0 and s.M[2] > 0


def test_zero_noise_field():
    n = 400
    st0 = _state(0.0, [1.0], [1.0], [0.0], [True])
    rec = DriverRecord(0, 0, np.full(n, 1e-2), np.zeros(n))
    snap = restart_flow(K6, FlowConfig(), st0, rec, at_steps=[n])[0][0]
    m = compute_M(snap, K6).M[0]
    assert m == pytest.approx((1 + 2 * K6.a * snap.t) ** -K6.beta, rel=5e-3)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 10 ** 6))
def test_cap_and_basic_inequality(seed, pid):
    r = run_flow(K6, FlowConfig(t_max=20.0), XS, DriverRecord(seed, pid), (0.25, 1.0, 4.0), LADDER)
    for s, ms in zip(r.snapshots, snapshots_M(r, K6)):
        a = s.alive
        assert np.all(ms.M[a] <= s.h[a] ** -K6.beta)
        assert np.all(ms.M[~a] == 0)
        for j, e in enumerate(LADDER):
            assert np.all(ms.stopped(j) <= e ** -K6.beta)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_eps_sets_monotone(seed):
    r = run_flow(K6, FlowConfig(t_max=20.0), XS, DriverRecord(seed, 0), (0.25, 1.0, 4.0, 16.0), LADDER)
    snaps = snapshots_M(r, K6)
    for j in range(len(LADDER)):
        for a, b in zip(snaps, snaps[1:]):
            assert np.all(b.crossed[j] >= a.crossed[j])
    for s in snaps:
        # smaller eps is a higher threshold: C^eps shrinks
        assert np.all(s.crossed[1:] <= s.crossed[:-1])


def test_track_stopping():
    xs = np.array([0.05, 0.15, 1.0, 2.0])
    r = run_flow(K6, FlowConfig(), xs, DriverRecord(2, 7), (), (0.2, 0.1, 0.05))
    T, val = track_stopping(r)
    # eps >= x: crossed at time 0
    assert T[0, 0] == 0.0 and T[0, 1] == 0.0 and T[1, 0] == 0.0
    # T^eps is nondecreasing as eps decreases and capped by T_x
    assert np.all(np.diff(T, axis=0) >= 0)
    assert np.all(T <= r.swallow_time[None, :])
    cap = np.array([0.2, 0.1, 0.05])[:, None] ** -K6.beta
    assert np.all(val <= cap)


def test_stopped_martingale_mean():
    n, t = 3000, 1.0
    vals = []
    for i in range(n):
        r = run_flow(K6, FlowConfig(t_max=t), np.array([1.0]), DriverRecord(31, i), (t,), (0.05,))
        vals.append(compute_M(r.snapshots[0], K6, r.eps_ladder, r.eps_cross).stopped(0)[0])
    est = one_point_mean(vals)
    assert abs(est.mean - 1.0) <= 3 * est.stderr + 0.02


def test_one_point_mean_at_zero():
    est = one_point_mean(np.full(200, 2.0 ** -K6.beta))
    assert est.mean == 2.0 ** -K6.beta and est.stderr == 0.0


def test_supermartingale_mean():
    n = 3000
    out = np.zeros((n, 3))
    for i in range(n):
        r = run_flow(K6, FlowConfig(t_max=4.0), np.array([1.0]), DriverRecord(32, i), (0.25, 1.0, 4.0))
        out[i] = [compute_M(s, K6).M[0] for s in r.snapshots]
    m = out.mean(axis=0)
    se = out.std(axis=0, ddof=1) / math.sqrt(n)
    assert m[1] <= m[0] + 3 * math.hypot(se[0], se[1])
    assert m[2] <= m[1] + 3 * math.hypot(se[1], se[2])


def test_two_point_at_time_zero():
    e = 1.0
    m1, m2 = 1.0 ** -K6.beta, 2.0 ** -K6.beta
    out = two_point_stats(np.full(10, min(m1, e ** -K6.beta)), np.full(10, min(m2, e ** -K6.beta)),
                          np.ones(10), np.zeros(10), 1.0, 2.0, K6.beta)
    assert out["product"].mean == pytest.approx(2.0 ** -K6.beta, rel=1e-15)
    assert out["envelope"] == pytest.approx(1.0, rel=1e-15)
    assert out["both_crossed"].mean == 0.0
    with pytest.raises(ValueError):
        two_point_stats([1], [1], [1], [1], 2.0, 1.0, K6.beta)
