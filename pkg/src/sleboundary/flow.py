"""Coupled Bessel flow on a grid of boundary points.

Every alive point receives the same increment pair ``(dt, dB)``:

    h     <- h + a dt / h + dB
    log_h' <- log_h' - a dt / h^2

with the Bessel-scaled step ``dt = min(dt_max, dt_scale * h_min^2)``.  A point
is swallowed when a step leaves it at or below ``kill_threshold``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .params import SleParams
from scipy import special

from .streams import derive_stream, derive_tail_stream, step_key, step_uniform

CHUNK = 8192


class IntegrationError(RuntimeError):
    """The scheme broke an invariant of the exact flow (step too large)."""


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    """Step control.

    ``dt_max`` caps the step only until the last requested observation time;
    afterwards steps follow the Bessel scaling alone, so the horizon can be
    many decades long at logarithmic cost.  ``kill_threshold=None`` means
    ``1e-6 * min(xs)``.

    ``lag_ratio`` enables multi-rate stepping: only points with
    ``h <= lag_ratio * h_min`` take every step; the rest receive the summed
    increments ``(sum dt, sum dB)`` of the same driver as one step, applied
    before that sum exceeds ``dt_scale * h^2`` at their own h.  ``inf``
    (the default) updates every point at every step.
    """

    dt_max: float = 1e-2
    dt_scale: float = 0.01
    kill_threshold: float | None = None
    t_max: float = 1e16
    lag_ratio: float = math.inf

    def __post_init__(self):
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if not 0 < self.dt_scale <= 0.1:
            raise ValueError("dt_scale must lie in (0, 0.1]")
        if self.kill_threshold is not None and not self.kill_threshold > 0:
            raise ValueError("kill_threshold must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not self.lag_ratio > 1:
            raise ValueError("lag_ratio must exceed 1")

    def kill_for(self, xs) -> float:
        if self.kill_threshold is not None:
            return float(self.kill_threshold)
        return 1e-6 * float(np.min(xs))

    def halved(self) -> "FlowConfig":
        return replace(self, dt_scale=self.dt_scale / 2)


@dataclass
class DriverRecord:
    """Replayable driver: the stream key plus, optionally, the steps taken."""

    seed: int
    path_id: int
    dt: np.ndarray | None = None
    db: np.ndarray | None = None

    def stream(self) -> np.random.Generator:
        return derive_stream(self.seed, self.path_id)

    @property
    def has_steps(self) -> bool:
        return self.dt is not None

    def driver_values(self) -> np.ndarray:
        """U at the start of every recorded step (U = -B)."""
        if self.db is None:
            raise ContractError("driver record carries no steps")
        u = np.empty(self.db.size + 1)
        u[0] = 0.0
        np.cumsum(-self.db, out=u[1:])
        return u

    def times(self) -> np.ndarray:
        if self.dt is None:
            raise ContractError("driver record carries no steps")
        t = np.empty(self.dt.size + 1)
        t[0] = 0.0
        np.cumsum(self.dt, out=t[1:])
        return t


@dataclass
class FlowState:
    t: float
    points: np.ndarray
    h: np.ndarray
    log_hp: np.ndarray
    alive: np.ndarray
    swallow_time: np.ndarray
    step_index: int = 0

    @property
    def first_alive(self) -> int:
        idx = np.flatnonzero(self.alive)
        return int(idx[0]) if idx.size else self.points.size


@dataclass(frozen=True)
class FlowMonitor:
    """Per-step record of Y, X, X^eps and A^eps for grid slice ``[lo, hi)``."""

    lo: int
    hi: int
    weights: np.ndarray
    eps_index: int = 0


@dataclass
class FlowResult:
    xs: np.ndarray
    swallow_time: np.ndarray
    swallow_step: np.ndarray  # step of death, -1 if never; same step means a joint swallow
    t_end: float
    n_steps: int
    snapshots: list
    eps_ladder: np.ndarray
    eps_cross: np.ndarray
    last_log_m: np.ndarray
    driver: DriverRecord
    final: FlowState
    monitor: np.ndarray | None = None
    beta: float = field(default=0.0, repr=False)

    @property
    def alive_fraction(self) -> float:
        return float(np.mean(~np.isfinite(self.swallow_time)))

    def monitor_columns(self) -> dict:
        if self.monitor is None:
            raise ContractError("flow was run without a monitor")
        m = self.monitor
        return {"t": m[:, 0], "Y": m[:, 1], "X": m[:, 2], "X_eps": m[:, 3], "A_eps": m[:, 4]}


def _check_points(xs) -> np.ndarray:
    xs = np.ascontiguousarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size == 0:
        raise ContractError("xs must be a nonempty 1-d array")
    if xs[0] <= 0 or np.any(np.diff(xs) <= 0):
        raise ContractError("xs must be positive and strictly increasing")
    return xs


def _check_ladder(eps_ladder) -> np.ndarray:
    eps = np.asarray(eps_ladder, dtype=float).ravel()
    if eps.size and (np.any(eps <= 0) or np.any(np.diff(eps) >= 0)):
        raise ContractError("eps ladder must be positive and strictly decreasing")
    return eps


def run_flow(
    params: SleParams,
    config: FlowConfig,
    xs,
    driver: DriverRecord,
    obs_times=(),
    eps_ladder=(),
    *,
    record_steps: bool = False,
    monitor: FlowMonitor | None = None,
) -> FlowResult:
    """Integrate the coupled flow of all points in ``xs`` under one driver.

    Snapshots are taken at the first step at or after each time in
    ``obs_times``.  For every ``eps`` in the ladder the first step at which
    ``h / h' <= eps`` (equivalently ``M >= eps^-beta``) is stored in
    ``eps_cross``; ``inf`` means never.
    """
    xs = _check_points(xs)
    eps = _check_ladder(eps_ladder)
    obs = np.sort(np.asarray(obs_times, dtype=float).ravel())
    n, m, n_obs = xs.size, eps.size, obs.size
    a, beta = params.a, params.beta
    kill = config.kill_for(xs)
    cap_until = float(obs[-1]) if n_obs else 0.0

    h = xs.copy()
    lhp = np.zeros(n)
    swallow = np.full(n, np.inf)
    sw_step = np.full(n, -1, dtype=np.int64)
    last_logm = -beta * np.log(xs)
    teps = np.full((m, n), np.inf)
    for j in range(m):
        teps[j, xs <= eps[j]] = 0.0
    n_cross = np.isfinite(teps).sum(axis=0).astype(np.int64)
    hp_cache = np.ones(n)
    pre_h = np.empty(n)
    pre_lhp = np.empty(n)

    snap_t = np.zeros(n_obs)
    snap_step = np.zeros(n_obs, dtype=np.int64)
    snap_first = np.zeros(n_obs, dtype=np.int64)
    snap_h = np.zeros((n_obs, n))
    snap_lhp = np.zeros((n_obs, n))
    obs_pos = 0
    while obs_pos < n_obs and obs[obs_pos] <= 0.0:
        snap_h[obs_pos] = h
        obs_pos += 1

    rng = driver.stream()
    key = step_key(driver.seed, driver.path_id)
    # t, first, steps, bad index, tail start, pending dt, pending dB, first before the step, saved pre-step count
    state = np.zeros(K.STATE_SIZE)
    state[K.BAD] = -1.0
    # the per-step monitor needs every point current at every step
    ratio = np.inf if monitor is not None else float(config.lag_ratio)
    rec_dt = np.zeros(CHUNK if record_steps else 0)
    rec_db = np.zeros(CHUNK if record_steps else 0)
    dts, dbs, mons = [], [], []
    if monitor is not None:
        if not (0 <= monitor.lo < monitor.hi <= n) or len(monitor.weights) != monitor.hi - monitor.lo:
            raise ContractError("monitor slice does not match the grid")
        if not 0 <= monitor.eps_index < m:
            raise ContractError("monitor eps index outside the ladder")
        mon_w = np.ascontiguousarray(monitor.weights, dtype=float)
        mon_buf = np.zeros((CHUNK, 5))
        mon_args = (True, monitor.lo, monitor.hi, mon_w, monitor.eps_index, mon_buf)
    else:
        mon_buf = np.zeros((0, 5))
        mon_args = (False, 0, 0, np.zeros(0), 0, mon_buf)

    k0 = CHUNK
    while True:
        if k0 >= CHUNK:
            normals = rng.standard_normal(CHUNK)
            k0 = 0
        status, used, obs_pos = K.advance_flow(
            state, h, lhp, swallow, sw_step, last_logm,
            a, beta, float(config.dt_max), float(config.dt_scale), kill, float(config.t_max),
            cap_until, ratio,
            eps, teps, n_cross, hp_cache, pre_h, pre_lhp,
            obs, obs_pos, snap_t, snap_step, snap_first, snap_h, snap_lhp,
            normals, k0,
            record_steps, rec_dt, rec_db,
            *mon_args,
        )
        if record_steps:
            dts.append(rec_dt[k0:used].copy())
            dbs.append(rec_db[k0:used].copy())
        if monitor is not None:
            mons.append(mon_buf[k0:used].copy())
        k0 = used
        if status == K.DIED:
            _resolve_joint_swallow(state, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, params, ratio,
                                   step_uniform(key, int(state[K.STEPS])))
            # a snapshot taken at this step must see the joint deaths too
            snap_first[:obs_pos][snap_step[:obs_pos] == int(state[K.STEPS])] = int(state[K.FIRST])
            continue
        if status == K.ORDER_VIOLATION:
            i = int(state[3])
            raise IntegrationError(
                f"ordering broken between points {i - 1} and {i} at step {int(state[2])} "
                f"(t={state[0]:.6g}); dt_scale={config.dt_scale} is too large"
            )
        if status == K.FINISHED:
            break

    t_end = float(state[0])
    first = int(state[1])
    late = _continue_killed(swallow, sw_step, last_logm, eps, teps, beta, driver)
    if monitor is not None and late.any():
        # monitor rows were written before the late crossings were known
        mons = [_add_late_mass(np.concatenate(mons), late, swallow, eps, monitor, beta)]
    snapshots = []
    for k in range(n_obs):
        if k < obs_pos:
            alive = np.arange(n) >= snap_first[k]
            sw = np.where(swallow <= snap_t[k], swallow, np.inf)
            snapshots.append(FlowState(float(snap_t[k]), xs, snap_h[k], snap_lhp[k], alive, sw, int(snap_step[k])))
        elif first >= n:
            # everything was swallowed before this observation time
            snapshots.append(FlowState(float(obs[k]), xs, h.copy(), lhp.copy(), np.zeros(n, bool), swallow.copy(), int(state[2])))
    if record_steps:
        driver = DriverRecord(driver.seed, driver.path_id, np.concatenate(dts), np.concatenate(dbs))
    final = FlowState(t_end, xs, h, lhp, np.arange(n) >= first, swallow.copy(), int(state[2]))
    return FlowResult(
        xs=xs, swallow_time=swallow, swallow_step=sw_step, t_end=t_end, n_steps=int(state[2]), snapshots=snapshots,
        eps_ladder=eps, eps_cross=teps, last_log_m=last_logm, driver=driver, final=final,
        monitor=np.concatenate(mons) if monitor is not None else None, beta=beta,
    )


def _resolve_joint_swallow(state, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, params, ratio, u):
    """Swallow, together with the point just killed, every point that the
    exact flow would swallow at the same time.

    For x < y with z = h(x)/h(y), Pr(T_y = T_x) = I_z(1 - 2a, 4a - 1).  The
    points swallowed with x are those with h(y) <= H*, and
    Pr(h(y) <= H*) = I_z(...) for every y exactly when
    H* = h(x) / I^{-1}(u) for one uniform u.  Uses pre-step values where
    they were saved.
    """
    n = h.size
    if int(state[K.TAIL]) < n:
        K._sync(state, h, lhp, params.a, ratio)
    first0 = int(state[K.FIRST0])
    n_pre = int(state[K.NPRE])
    first = int(state[K.FIRST])
    z_min = special.betaincinv(1.0 - 2.0 * params.a, 4.0 * params.a - 1.0, u)
    h_star = pre_h[0] / z_min if z_min > 0 else math.inf
    t = state[K.T]
    i = first
    while i < n:
        j = i - first0
        saved = j < n_pre
        hy = pre_h[j] if saved else h[i]
        if hy > h_star:
            break
        swallow[i] = t
        sw_step[i] = int(state[K.STEPS])
        if saved:
            last_logm[i] = params.beta * (pre_lhp[j] - math.log(pre_h[j]))
        else:
            last_logm[i] = params.beta * (lhp[i] - math.log(h[i]))
        i += 1
    state[K.FIRST] = i


def _continue_killed(swallow, sw_step, last_logm, eps, teps, beta, driver) -> np.ndarray:
    """Resolve the eps-crossings a killed point would still make before T_x.

    In the clock ds = dt / h^2, R = log(h'/h) is a Brownian motion with drift
    -(2a - 1/2) = -beta/2 up to T_x (s -> inf), so its overshoot above the
    kill value is Exp(beta).  A point killed with log M = beta R uncrossed at
    eps therefore crosses it before T_x iff log M + G >= beta log(1/eps),
    G ~ Exp(1).  Points killed in the same step share G (they follow the same
    driver to 0).  Crossing times are set to T_x.  Returns the
    ``(len(eps), n)`` mask of crossings gained this way.
    """
    late = np.zeros(teps.shape, dtype=bool)
    if not eps.size:
        return late
    dead = np.isfinite(swallow) & np.isfinite(last_logm) & np.isinf(teps).any(axis=0)
    if not dead.any():
        return late
    rng = derive_tail_stream(driver.seed, driver.path_id)
    steps, group = np.unique(sw_step[dead], return_inverse=True)
    g = rng.standard_exponential(steps.size)[group]
    idx = np.flatnonzero(dead)
    level = last_logm[idx] + g
    for j in range(eps.size):
        hit = np.isinf(teps[j, idx]) & (level >= -beta * math.log(eps[j]))
        teps[j, idx[hit]] = swallow[idx[hit]]
        late[j, idx[hit]] = True
    return late


def _add_late_mass(mon, late, swallow, eps, monitor, beta):
    """Add late crossings to the monitored A^eps from their crossing step on."""
    cap = eps[monitor.eps_index] ** (-beta)
    for i in np.flatnonzero(late[monitor.eps_index, monitor.lo:monitor.hi]) + monitor.lo:
        mon[mon[:, 0] >= swallow[i], 4] += cap * monitor.weights[i - monitor.lo]
    return mon


def restart_flow(params: SleParams, config: FlowConfig, state: FlowState, driver: DriverRecord, at_steps=(), kill: float | None = None):
    """Run h_{t,s} on the alive images ``h_t(x)`` with the driver's suffix.

    ``state`` must be a snapshot of a run with ``record_steps=True`` under the
    same ``driver``.  The restarted derivative starts at ``h_{t,0}' = 1``.
    Returns ``(snapshots, final)`` where snapshots are taken after each step
    count in ``at_steps`` (counted from the restart); times are absolute.
    With multi-rate stepping the lagging points are brought up to date at
    every snapshot, so ``at_steps`` must list each observation step of the
    direct run after ``state`` for the two to agree bit for bit.
    """
    if not driver.has_steps:
        raise ContractError("restart needs a driver record with steps")
    if state.step_index > driver.dt.size:
        raise ContractError("driver record is shorter than the snapshot step index")
    sel = np.flatnonzero(state.alive)
    h = np.ascontiguousarray(state.h[sel])
    # carry the direct run's running sum so both perform the same float
    # additions; log h_{t,s}' is the difference, exact to one rounding
    base = np.ascontiguousarray(state.log_hp[sel])
    lhp = base.copy()
    swallow = np.full(sel.size, np.inf)
    sw_step = np.full(sel.size, -1, dtype=np.int64)
    last_logm = np.full(sel.size, np.nan)
    pre_h = np.empty(sel.size)
    pre_lhp = np.empty(sel.size)
    if kill is None:
        kill = config.kill_for(state.points)
    at = np.asarray(sorted(at_steps), dtype=np.int64)
    out_h = np.zeros((at.size, sel.size))
    out_lhp = np.zeros((at.size, sel.size))
    out_t = np.zeros(at.size)
    out_first = np.zeros(at.size, dtype=np.int64)
    kstate = np.zeros(K.STATE_SIZE)
    kstate[K.T] = state.t
    kstate[K.BAD] = -1.0
    key = step_key(driver.seed, driver.path_id)
    ratio = float(config.lag_ratio)
    k, s_pos = int(state.step_index), 0
    while True:
        status, k, s_pos = K.replay_flow(
            kstate, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, params.a, params.beta,
            float(config.dt_scale), float(config.dt_max), float(kill), ratio,
            driver.dt, driver.db, k, out_h, out_lhp, out_t, out_first, at, s_pos,
        )
        if status == K.BAD_SUFFIX:
            raise ContractError(f"driver suffix does not match the snapshot (record step {int(kstate[K.BAD])})")
        if status != K.DIED:
            break
        # same absolute step number as in the direct run, hence the same uniform
        _resolve_joint_swallow(kstate, h, lhp, swallow, sw_step, last_logm, pre_h, pre_lhp, params, ratio,
                               step_uniform(key, state.step_index + int(kstate[K.STEPS])))
        out_first[:s_pos][at[:s_pos] == int(kstate[K.STEPS])] = int(kstate[K.FIRST])
    snaps = []
    for k in range(at.size):
        alive = np.arange(sel.size) >= out_first[k]
        sw = np.where(swallow <= out_t[k], swallow, np.inf)
        snaps.append(FlowState(float(out_t[k]), state.h[sel], out_h[k], out_lhp[k] - base, alive, sw, int(at[k])))
    n_img = sel.size
    final = FlowState(float(kstate[0]), state.h[sel], h, lhp - base, np.arange(n_img) >= int(kstate[1]), swallow, int(kstate[2]))
    return snaps, final


def grid_mask(points: np.ndarray, interval) -> np.ndarray:
    x1, x2 = _ends(interval)
    return (points > x1) & (points <= x2)


def _ends(interval):
    if hasattr(interval, "x1"):
        return float(interval.x1), float(interval.x2)
    return float(interval[0]), float(interval[1])


def compute_Y(state: FlowState, interval) -> float:
    """Smallest h over alive grid points of ``interval``; 0 once all are dead."""
    mask = grid_mask(state.points, interval)
    if not mask.any():
        raise ContractError("interval contains no grid point")
    live = mask & state.alive
    if not live.any():
        return 0.0
    return float(state.h[live].min())


def crossing_times(t, y, eps: float) -> np.ndarray:
    """Alternating crossing times of a sampled Y path between eps and 2 eps.

    Odd entries (1st, 3rd, ...) are the first samples with ``Y <= eps``;
    even entries the first subsequent samples with ``Y > 2 eps``.  The
    sequence stops once Y reaches 0.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    out = []
    i, n = 0, y.size
    down = True
    while i < n:
        if down:
            hits = np.flatnonzero(y[i:] <= eps)
        else:
            hits = np.flatnonzero(y[i:] > 2 * eps)
        if hits.size == 0:
            break
        j = i + int(hits[0])
        out.append(t[j])
        if y[j] <= 0.0:
            break
        down = not down
        i = j + 1
    return np.asarray(out)


def simulate_q_process(params: SleParams, x: float, t: float, config: FlowConfig, driver: DriverRecord) -> bool:
    """Integrate dh = (1 - 3a)/h dt + dW from x; True if still positive at t."""
    return bool(np.isinf(death_time(1.0 - 3.0 * params.a, x, t, config, driver)))


def q_process_death_time(params: SleParams, x: float, t_end: float, config: FlowConfig, driver: DriverRecord) -> float:
    """Time the Q_x process reaches the kill threshold, ``inf`` if alive at ``t_end``."""
    return death_time(1.0 - 3.0 * params.a, x, t_end, config, driver)


def death_time(drift: float, x: float, t_end: float, config: FlowConfig, driver: DriverRecord, chunk: int = 2048) -> float:
    """Single-point Bessel-type process dh = drift/h dt + dW started at x."""
    if not (x > 0 and t_end > 0):
        raise ContractError("x and t must be positive")
    kill = config.kill_threshold if config.kill_threshold is not None else 1e-6 * x
    rng = driver.stream()
    state = np.array([0.0, float(x), 0.0])
    while not K.advance_single(state, float(drift), float(config.dt_max), float(config.dt_scale), float(kill), float(t_end), rng.standard_normal(chunk)):
        pass
    return float(state[0]) if state[2] != 0.0 else np.inf


def swallow_times(result: FlowResult) -> np.ndarray:
    return result.swallow_time


def swallow_order(result: FlowResult) -> np.ndarray:
    """Death step per point as float, inf if never swallowed.

    Use this, not ``swallow_time``, to decide "strictly before": near total
    swallowing dt falls below the spacing of floats at t, so deaths in
    different steps can share a time value.
    """
    return np.where(result.swallow_step >= 0, result.swallow_step.astype(float), np.inf)


def log_m(state: FlowState, beta: float) -> np.ndarray:
    """beta * (log h' - log h) on alive points, -inf on dead ones."""
    out = np.full(state.points.size, -np.inf)
    a = state.alive
    out[a] = beta * (state.log_hp[a] - np.log(state.h[a]))
    return out
