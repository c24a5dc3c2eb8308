"""Compiled inner loops for the coupled boundary flow.

Each kernel consumes a chunk of standard normals and returns when the chunk
is exhausted, the path is finished, or a step swallowed the leading point
while others remain (``DIED``, so the caller can resolve which further
points are swallowed at the same time); the Python side refills the chunk
from the path's own random stream.  All floating point work uses the same
expression order in the direct and the replayed integrations, which is what
makes restarts bit-identical.
"""

import math

import numpy as np
from numba import njit

NEED_NORMALS = 0
FINISHED = 1
ORDER_VIOLATION = 2
BAD_SUFFIX = 3
DIED = 4


@njit(cache=True, inline="always")
def _step_point(hi, lhpi, adt, dB):
    inv = 1.0 / hi
    q = adt * inv
    return hi + q + dB, lhpi - q * inv


@njit(cache=True, inline="always")
def _step_all(h, lhp, first, adt, dB):
    for i in range(first, h.size):
        hn, ln = _step_point(h[i], lhp[i], adt, dB)
        h[i] = hn
        lhp[i] = ln


# flow state vector layout
T, FIRST, STEPS, BAD, TAIL, ACC_DT, ACC_DB, FIRST0, NPRE = range(9)
STATE_SIZE = 9


@njit(cache=True)
def _tail_start(h, first, ratio):
    n = h.size
    if first >= n:
        return n
    lim = ratio * h[first]
    i = first
    while i < n and h[i] <= lim:
        i += 1
    return i


@njit(cache=True)
def _check_cross(h, lhp, lo, hi, t, eps, teps, n_cross, hp_cache):
    m = eps.size
    for i in range(lo, hi):
        c = n_cross[i]
        if c >= m:
            continue
        hi_ = h[i]
        # hp_cache >= h' since log h' only decreases
        if hi_ > eps[c] * hp_cache[i]:
            continue
        hp = math.exp(lhp[i])
        hp_cache[i] = hp
        while c < m and hi_ <= eps[c] * hp:
            teps[c, i] = t
            c += 1
        n_cross[i] = c


@njit(cache=True)
def _sync(state, h, lhp, a, ratio):
    """Apply the accumulated increments to the lagging tail.

    Returns the index of an ordering violation or -1.
    """
    n = h.size
    first = int(state[FIRST])
    tail = int(state[TAIL])
    lo = tail if tail > first else first
    bad = -1
    if state[ACC_DT] > 0.0 and lo < n:
        _step_all(h, lhp, lo, a * state[ACC_DT], state[ACC_DB])
        if lo > first and h[lo] < h[lo - 1]:
            bad = lo
    state[ACC_DT] = 0.0
    state[ACC_DB] = 0.0
    state[TAIL] = _tail_start(h, first, ratio)
    return bad


@njit(cache=True)
def _head_step(state, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, a, beta, kill, dt, dB):
    """One step of the head [first, tail); returns an ordering violation index or -1."""
    n = h.size
    first = int(state[FIRST])
    tail = int(state[TAIL])
    hmin = h[first]
    lim = 8.0 * hmin
    # pre-step values of the points that can die in this step
    n_pre = 0
    for i in range(first, tail):
        if h[i] > lim:
            break
        pre_h[n_pre] = h[i]
        pre_lhp[n_pre] = lhp[i]
        n_pre += 1
    state[NPRE] = n_pre
    adt = a * dt
    for i in range(first, tail):
        hn, ln = _step_point(h[i], lhp[i], adt, dB)
        h[i] = hn
        lhp[i] = ln
    # order can only break where a dt / h^2 is not small
    for i in range(first + 1, tail):
        if h[i - 1] > lim:
            break
        if h[i] < h[i - 1]:
            return i
    t = state[T] + dt
    state[T] = t
    state[STEPS] += 1.0
    if tail < n:
        state[ACC_DT] += dt
        state[ACC_DB] += dB
    first0 = first
    state[FIRST0] = first0
    while first < tail and h[first] <= kill:
        swallow[first] = t
        sw_step[first] = int(state[STEPS])
        j = first - first0
        if j < n_pre:
            last_logm[first] = beta * (pre_lhp[j] - math.log(pre_h[j]))
        else:
            last_logm[first] = np.nan
        first += 1
    state[FIRST] = first
    return -1


@njit(cache=True)
def advance_flow(
    state,          # float64[STATE_SIZE], see the layout above
    h, lhp, swallow, sw_step, last_logm,
    a, beta, dt_max, dt_scale, kill, t_max, cap_until, ratio,
    eps, teps, n_cross, hp_cache, pre_h, pre_lhp,
    obs_times, obs_pos, snap_t, snap_step, snap_first, snap_h, snap_lhp,
    normals, k0,
    record, rec_dt, rec_db,
    mon_on, mon_lo, mon_hi, mon_w, mon_j, mon_buf,
):
    n = h.size
    m = eps.size
    n_obs = obs_times.size
    k = k0
    while True:
        first = int(state[FIRST])
        if first >= n or state[T] >= t_max:
            bad = _sync(state, h, lhp, a, ratio)
            if bad >= 0:
                state[BAD] = bad
                return ORDER_VIOLATION, k, obs_pos
            return FINISHED, k, obs_pos
        if k >= normals.size:
            return NEED_NORMALS, k, obs_pos
        if first >= int(state[TAIL]):
            tail0 = int(state[TAIL])
            bad = _sync(state, h, lhp, a, ratio)
            if bad >= 0:
                state[BAD] = bad
                return ORDER_VIOLATION, k, obs_pos
            if m > 0:
                _check_cross(h, lhp, tail0, n, state[T], eps, teps, n_cross, hp_cache)
        hmin = h[first]
        dt = dt_scale * hmin * hmin
        if state[T] < cap_until and dt > dt_max:
            dt = dt_max
        tail = int(state[TAIL])
        if tail < n and state[ACC_DT] + dt > dt_scale * h[tail] * h[tail]:
            bad = _sync(state, h, lhp, a, ratio)
            if bad >= 0:
                state[BAD] = bad
                return ORDER_VIOLATION, k, obs_pos
            if m > 0:
                _check_cross(h, lhp, tail, n, state[T], eps, teps, n_cross, hp_cache)
        dB = math.sqrt(dt) * normals[k]
        if record:
            rec_dt[k] = dt
            rec_db[k] = dB
        bad = _head_step(state, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, a, beta, kill, dt, dB)
        if bad >= 0:
            state[BAD] = bad
            return ORDER_VIOLATION, k, obs_pos
        t = state[T]
        if m > 0:
            _check_cross(h, lhp, int(state[FIRST]), int(state[TAIL]), t, eps, teps, n_cross, hp_cache)
        if obs_pos < n_obs and t >= obs_times[obs_pos]:
            tail0 = int(state[TAIL])
            bad = _sync(state, h, lhp, a, ratio)
            if bad >= 0:
                state[BAD] = bad
                return ORDER_VIOLATION, k, obs_pos
            if m > 0:
                _check_cross(h, lhp, tail0, n, t, eps, teps, n_cross, hp_cache)
            while obs_pos < n_obs and t >= obs_times[obs_pos]:
                snap_t[obs_pos] = t
                snap_step[obs_pos] = int(state[STEPS])
                snap_first[obs_pos] = int(state[FIRST])
                for i in range(n):
                    snap_h[obs_pos, i] = h[i]
                    snap_lhp[obs_pos, i] = lhp[i]
                obs_pos += 1
        if mon_on:
            _monitor(t, int(state[FIRST]), h, lhp, beta, teps, mon_lo, mon_hi, mon_w, mon_j, eps, mon_buf, k)
        k += 1
        first = int(state[FIRST])
        if first > int(state[FIRST0]) and first < n:
            return DIED, k, obs_pos


@njit(cache=True)
def _monitor(t, first, h, lhp, beta, teps, lo, hi, w, j, eps, buf, k):
    start = lo if lo > first else first
    x_full = 0.0
    x_eps = 0.0
    a_eps = 0.0
    cap = eps[j] ** (-beta)
    for i in range(lo, hi):
        if teps[j, i] <= t:
            a_eps += w[i - lo]
    a_eps *= cap
    for i in range(start, hi):
        mi = math.exp(beta * (lhp[i] - math.log(h[i])))
        x_full += w[i - lo] * mi
        if teps[j, i] > t:
            x_eps += w[i - lo] * mi
    buf[k, 0] = t
    buf[k, 1] = h[start] if start < hi else 0.0
    buf[k, 2] = x_full
    buf[k, 3] = x_eps
    buf[k, 4] = a_eps


@njit(cache=True)
def replay_flow(state, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, a, beta, dt_scale, dt_max, kill, ratio,
                rec_dt, rec_db, k0, out_h, out_lhp, out_t, out_first, snap_steps, s_pos):
    """Apply recorded steps ``rec_dt[k0:], rec_db[k0:]``.

    ``state[STEPS]`` counts the replayed steps.  The tail is brought up to
    date after the step counts listed in ``snap_steps`` (counted from the
    start of the replay), where snapshots are written; these must include
    every observation step of the direct run for the two to agree bit for
    bit.  Returns ``(status, next record index, s_pos)``; ``DIED`` as in
    ``advance_flow``.
    """
    n = h.size
    n_snap = snap_steps.size
    steps = int(state[STEPS])
    if steps == 0:
        state[TAIL] = _tail_start(h, 0, ratio)
        while s_pos < n_snap and snap_steps[s_pos] == 0:
            out_t[s_pos] = state[T]
            out_first[s_pos] = int(state[FIRST])
            for i in range(n):
                out_h[s_pos, i] = h[i]
                out_lhp[s_pos, i] = lhp[i]
            s_pos += 1
    for k in range(k0, rec_dt.size):
        first = int(state[FIRST])
        if first >= n:
            break
        if s_pos >= n_snap and n_snap > 0:
            break
        if first >= int(state[TAIL]):
            _sync(state, h, lhp, a, ratio)
        dt = rec_dt[k]
        dB = rec_db[k]
        hmin = h[first]
        rule = dt_scale * hmin * hmin
        if dt != rule and not (dt == dt_max and dt < rule):
            state[BAD] = k
            return BAD_SUFFIX, k, s_pos
        tail = int(state[TAIL])
        if tail < n and state[ACC_DT] + dt > dt_scale * h[tail] * h[tail]:
            _sync(state, h, lhp, a, ratio)
        _head_step(state, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, a, beta, kill, dt, dB)
        steps += 1
        state[STEPS] = steps
        if s_pos < n_snap and snap_steps[s_pos] == steps:
            _sync(state, h, lhp, a, ratio)
            while s_pos < n_snap and snap_steps[s_pos] == steps:
                out_t[s_pos] = state[T]
                out_first[s_pos] = int(state[FIRST])
                for i in range(n):
                    out_h[s_pos, i] = h[i]
                    out_lhp[s_pos, i] = lhp[i]
                s_pos += 1
        first = int(state[FIRST])
        if first > int(state[FIRST0]) and first < n:
            return DIED, k + 1, s_pos
    _sync(state, h, lhp, a, ratio)
    return FINISHED, rec_dt.size, s_pos


@njit(cache=True)
def advance_single(state, drift, dt_max, dt_scale, kill, t_end, normals):
    """One point under dh = drift/h dt + dW; state = [t, h, dead]."""
    t = state[0]
    h = state[1]
    for k in range(normals.size):
        if state[2] != 0.0 or t >= t_end:
            break
        dt = dt_scale * h * h
        if dt > dt_max:
            dt = dt_max
        h = h + drift * dt / h + math.sqrt(dt) * normals[k]
        t += dt
        if h <= kill:
            state[2] = 1.0
    state[0] = t
    state[1] = h
    return state[2] != 0.0 or t >= t_end


@njit(cache=True)
def loewner_tip(rec_dt, drv, n_steps, a):
    """Tip of the curve after ``n_steps`` steps of a piecewise-constant driver.

    ``drv[k]`` is the driver value held during step ``k``.  The tip is the
    preimage of the last held value under the composed step maps
    ``(g - u)^2 -> (g - u)^2 + 2 a dt``.
    """
    if n_steps == 0:
        return 0j
    w = complex(drv[n_steps - 1], 0.0)
    for k in range(n_steps - 1, -1, -1):
        u = drv[k]
        z = (w - u) * (w - u) - 2.0 * a * rec_dt[k]
        r = np.sqrt(z)
        if r.imag < 0.0:
            r = -r
        elif r.imag == 0.0:
            if z.real < 0.0:
                r = complex(0.0, math.sqrt(-z.real))
            elif (w - u).real < 0.0:
                r = -r
            if w.imag == 0.0 and r.imag == 0.0 and z.real == 0.0:
                r = complex(r.real, 1e-15)
        w = u + r
    return w
