"""Approximate boundary measures on a grid of cells.

A cell is represented by its midpoint; the cell is in C^eps once the
midpoint's field has crossed ``eps**-beta``.  The same cells and weights are
used for the quadrature of X and for the measure, which is what makes the
split ``X^eps + A^eps = int M^eps`` exact on the grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .flow import ContractError, DriverRecord, FlowConfig, FlowMonitor, run_flow
from .params import SleParams
from .stats import Estimate, estimate, linear_fit


class ResolutionError(ContractError):
    pass


class HorizonError(RuntimeError):
    """Too many points still alive at the horizon; raise ``t_max``."""


@dataclass(frozen=True)
class IntervalSpec:
    x1: float
    x2: float

    def __post_init__(self):
        if not (0 < self.x1 < self.x2 < math.inf):
            raise ValueError(f"need 0 < x1 < x2 < inf, got ({self.x1}, {self.x2}]")

    @property
    def length(self) -> float:
        return self.x2 - self.x1

    def scaled(self, r: float) -> "IntervalSpec":
        return IntervalSpec(r * self.x1, r * self.x2)

    @classmethod
    def parse(cls, text: str) -> "IntervalSpec":
        x1, x2 = text.split(":")
        return cls(float(x1), float(x2))


@dataclass(frozen=True)
class CellGrid:
    edges: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    @property
    def size(self) -> int:
        return self.centers.size

    def mask(self, interval) -> np.ndarray:
        x1, x2 = _ends(interval)
        return (self.centers > x1) & (self.centers <= x2)

    def spacing(self, interval=None) -> float:
        w = self.widths if interval is None else self.widths[self.mask(interval)]
        return float(w.max())


def cell_grid(segments) -> CellGrid:
    """Uniform cells on consecutive segments ``[(x1, x2, n), ...]``."""
    edges = []
    for k, (x1, x2, n) in enumerate(segments):
        e = np.linspace(float(x1), float(x2), int(n) + 1)
        if k and not np.isclose(e[0], edges[-1][-1], rtol=0, atol=1e-15):
            raise ValueError("segments must be contiguous")
        edges.append(e if k == 0 else e[1:])
    edges = np.concatenate(edges)
    if edges[0] < 0 or np.any(np.diff(edges) <= 0):
        raise ValueError("segments must be positive and increasing")
    return CellGrid(edges, 0.5 * (edges[1:] + edges[:-1]), np.diff(edges))


def geometric_grid(x1: float, x2: float, n: int) -> CellGrid:
    edges = np.geomspace(x1, x2, n + 1)
    return CellGrid(edges, np.sqrt(edges[1:] * edges[:-1]), np.diff(edges))


def _ends(interval):
    if hasattr(interval, "x1"):
        return float(interval.x1), float(interval.x2)
    return float(interval[0]), float(interval[1])


@dataclass
class CellPath:
    """One path of the flow seen through a cell grid.

    Cells with midpoint at or below ``skip_below`` are not integrated; they
    lie in C^eps for every ladder entry from time 0, and their unstopped
    field is reported as NaN.
    """

    path_id: int
    grid: CellGrid
    eps: np.ndarray
    beta: float
    cross: np.ndarray            # (m, cells) first crossing time, inf if never
    swallow: np.ndarray          # (cells,) T_x, 0 for skipped cells
    snap_t: np.ndarray
    snap_log_m: np.ndarray       # (snapshots, cells)
    last_log_m: np.ndarray
    t_end: float
    n_steps: int
    monitor: np.ndarray | None = None
    driver: DriverRecord | None = field(default=None, repr=False)

    def cap(self, j: int) -> float:
        return float(self.eps[j]) ** (-self.beta)

    def crossed_by(self, j: int, t: float = math.inf) -> np.ndarray:
        c = self.cross[j]
        return np.isfinite(c) & (c <= t)

    def masses(self, j: int, t: float = math.inf) -> np.ndarray:
        """Per-cell mu^eps mass (A^eps density times width) at time t."""
        return np.where(self.crossed_by(j, t), self.cap(j) * self.grid.widths, 0.0)

    def alive_fraction(self, interval=None) -> float:
        sw = self.swallow if interval is None else self.swallow[self.grid.mask(interval)]
        return float(np.mean(~np.isfinite(sw)))


def run_cells(
    params: SleParams,
    config: FlowConfig,
    grid: CellGrid,
    driver: DriverRecord,
    eps_ladder=(),
    obs_times=(),
    *,
    skip_below: float = 0.0,
    monitor_interval=None,
    monitor_eps_index: int = 0,
    record_steps: bool = False,
) -> CellPath:
    eps = np.asarray(eps_ladder, float).ravel()
    if eps.size:
        if grid.widths.min() > eps.min() / 8 * (1 + 1e-9):
            raise ResolutionError("no part of the grid resolves the smallest eps")
        if skip_below > eps.min():
            raise ContractError("skipped cells must lie below the smallest eps")
    sim = grid.centers > skip_below
    off = int(np.argmax(sim)) if sim.any() else grid.size
    xs = grid.centers[off:]
    mon = None
    if monitor_interval is not None:
        m = grid.mask(monitor_interval)[off:]
        idx = np.flatnonzero(m)
        if idx.size == 0 or idx.size != idx[-1] - idx[0] + 1:
            raise ContractError("monitor interval must cover simulated cells")
        lo, hi = int(idx[0]), int(idx[-1]) + 1
        mon = FlowMonitor(lo, hi, grid.widths[off:][lo:hi], monitor_eps_index)
    res = run_flow(params, config, xs, driver, obs_times, eps, record_steps=record_steps, monitor=mon)
    n = grid.size
    cross = np.zeros((eps.size, n))
    cross[:, off:] = res.eps_cross
    swallow = np.zeros(n)
    swallow[off:] = res.swallow_time
    snap_t = np.array([s.t for s in res.snapshots])
    snap_log_m = np.full((len(res.snapshots), n), np.nan)
    for k, s in enumerate(res.snapshots):
        lm = np.full(xs.size, -np.inf)
        lm[s.alive] = params.beta * (s.log_hp[s.alive] - np.log(s.h[s.alive]))
        snap_log_m[k, off:] = lm
    last = np.full(n, np.nan)
    last[off:] = res.last_log_m
    monitor = res.monitor
    if monitor is not None and off:
        # skipped cells inside the interval are crossed from time 0
        sk = grid.mask(monitor_interval)[:off]
        if sk.any():
            monitor = monitor.copy()
            monitor[:, 4] += eps[monitor_eps_index] ** (-params.beta) * grid.widths[:off][sk].sum()
    return CellPath(
        driver.path_id, grid, eps, params.beta, cross, swallow, snap_t, snap_log_m, last,
        res.t_end, res.n_steps, monitor, res.driver,
    )


def check_resolution(grid: CellGrid, eps, interval=None) -> None:
    """Cells of ``interval`` must be no wider than eps/8."""
    eps_min = float(np.min(eps))
    if grid.spacing(interval) > eps_min / 8 * (1 + 1e-9):
        raise ResolutionError(f"grid spacing {grid.spacing(interval):.3g} exceeds eps/8 = {eps_min / 8:.3g}")


# --------------------------------------------------------------------------
# X and the Doob-Meyer split


def quadrature_X(M: np.ndarray, grid: CellGrid, interval, min_cells: int = 64) -> float:
    """Midpoint quadrature of a field over the cells of ``interval``; dead cells carry 0."""
    mask = grid.mask(interval)
    if mask.sum() < min_cells:
        raise ResolutionError(f"interval has {mask.sum()} cells, need {min_cells}")
    return math.fsum(grid.widths[mask] * np.asarray(M)[mask])


def initial_X(interval, params: SleParams) -> float:
    x1, x2 = _ends(interval)
    return (x2 ** params.d - x1 ** params.d) / params.d


@dataclass
class DoobMeyerSplit:
    t: np.ndarray
    X_eps: np.ndarray
    A_eps: np.ndarray
    total: np.ndarray            # int_I M^eps by the same quadrature

    def residual(self) -> np.ndarray:
        """|X + A - total| / total."""
        return np.abs(self.X_eps + self.A_eps - self.total) / np.maximum(self.total, 1e-300)


def split_at(path: CellPath, k: int, interval, j: int = 0):
    """(X^eps, A^eps, int_I M^eps) at snapshot ``k``."""
    mask = path.grid.mask(interval)
    t = path.snap_t[k]
    crossed = path.crossed_by(j, t)[mask]
    w = path.grid.widths[mask]
    cap = path.cap(j)
    M = np.exp(path.snap_log_m[k][mask])
    stopped = np.where(crossed, cap, np.minimum(M, cap))
    X = math.fsum(w[~crossed] * stopped[~crossed])
    A = cap * math.fsum(w[crossed])
    total = math.fsum(w * stopped)
    return X, A, total


def doob_meyer_split(path: CellPath, interval, j: int = 0) -> DoobMeyerSplit:
    rows = [split_at(path, k, interval, j) for k in range(path.snap_t.size)]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return DoobMeyerSplit(path.snap_t.copy(), arr[:, 0], arr[:, 1], arr[:, 2])


def monitor_split(path: CellPath) -> DoobMeyerSplit:
    """Per-step split from a run with ``monitor_interval`` set."""
    m = path.monitor
    if m is None:
        raise ContractError("path was run without a monitor")
    return DoobMeyerSplit(m[:, 0], m[:, 3], m[:, 4], m[:, 3] + m[:, 4])


# --------------------------------------------------------------------------
# mu^eps


@dataclass(frozen=True)
class MeasureEstimate:
    eps: float
    interval: IntervalSpec
    mass: float
    path_id: int


def mu_eps_mass(path: CellPath, j: int, interval, t: float = math.inf) -> MeasureEstimate:
    """eps^-beta |I n C_t^eps| on the grid; ``t = inf`` gives mu^eps(I)."""
    check_resolution(path.grid, path.eps[j], interval)
    mask = path.grid.mask(interval)
    mass = math.fsum(path.masses(j, t)[mask])
    iv = interval if isinstance(interval, IntervalSpec) else IntervalSpec(*_ends(interval))
    return MeasureEstimate(float(path.eps[j]), iv, mass, path.path_id)


def require_horizon(paths, interval, limit: float = 0.01) -> float:
    """Fraction of (path, cell) pairs of ``interval`` still alive; error above ``limit``."""
    frac = float(np.mean([p.alive_fraction(interval) for p in paths]))
    if frac >= limit:
        raise HorizonError(f"{100 * frac:.2f}% of points in {interval} alive at the horizon")
    return frac


def expected_swallowed_mass_mc(paths, interval, t: float, j: int) -> Estimate:
    """Mean over paths of A^eps(t) = eps^-beta |I n C_t^eps|."""
    vals = [mu_eps_mass(p, j, interval, t).mass for p in paths]
    return estimate(vals, [p.path_id for p in paths])


# --------------------------------------------------------------------------
# energy and dyadic masses


def energy(masses, grid: CellGrid, alpha: float, params: SleParams, interval=None) -> float:
    """sum_{|i-j| >= 2} m_i m_j / |c_i - c_j|^alpha over cells of ``interval``.

    Pairs in the same or in adjacent cells are left out.
    """
    if not 0 < alpha < params.d:
        raise ValueError(f"alpha must lie in (0, d={params.d}), got {alpha}")
    m = np.asarray(masses, float)
    idx = np.arange(grid.size)
    if interval is not None:
        sel = grid.mask(interval)
        m, idx = m[sel], idx[sel]
    nz = np.flatnonzero(m)
    if nz.size < 2:
        return 0.0
    m, idx, c = m[nz], idx[nz], grid.centers[idx[nz]]
    far = np.abs(idx[:, None] - idx[None, :]) >= 2
    dist = np.abs(c[:, None] - c[None, :])
    kern = np.zeros_like(dist)
    kern[far] = dist[far] ** (-alpha)
    return float(m @ kern @ m)


def excluded_energy_bound(masses, grid: CellGrid, alpha: float) -> float:
    """Size of the near-diagonal pairs left out of :func:`energy`, as if they
    were spread over a cell width: sum of (m_i + m_{i+1})^2 w^-alpha."""
    m = np.asarray(masses, float)
    w = grid.widths
    pair = np.concatenate([m[:-1] + m[1:], m[-1:]])
    return float(np.sum(pair ** 2 * w ** (-alpha)))


def dyadic_max_mass(masses, grid: CellGrid, interval, n_max: int) -> np.ndarray:
    """Per level n <= n_max, the largest mass of the 2^n dyadic pieces of ``interval``."""
    x1, x2 = _ends(interval)
    mask = grid.mask(interval)
    if mask.sum() < 8 * 2 ** n_max:
        raise ResolutionError(f"need {8 * 2 ** n_max} cells for level {n_max}, have {mask.sum()}")
    m = np.asarray(masses, float)[mask]
    c = grid.centers[mask]
    L = x2 - x1
    # index of the finest dyadic piece (x1 + kL/2^n, x1 + (k+1)L/2^n]
    k = np.clip(np.ceil((c - x1) / L * 2 ** n_max).astype(np.int64) - 1, 0, 2 ** n_max - 1)
    fine = np.bincount(k, weights=m, minlength=2 ** n_max)
    out = np.empty(n_max + 1)
    level = fine
    for n in range(n_max, -1, -1):
        out[n] = level.max()
        if n:
            level = level[0::2] + level[1::2]
    return out


# --------------------------------------------------------------------------
# eps ladder


@dataclass
class LadderResult:
    eps: np.ndarray
    estimates: list
    differences: np.ndarray
    diff_stderr: np.ndarray
    median_abs_diff: np.ndarray
    exponent: float                # exponent used for the extrapolation
    limit: Estimate
    free_exponent: float | None
    free_limit: float | None
    warnings: list = field(default_factory=list)


def extrapolate(eps, means, stderr, p: float) -> Estimate:
    """Weighted linear fit of ``mean = L + b eps^p``; returns L."""
    w = 1.0 / np.maximum(np.asarray(stderr, float), 1e-300) ** 2
    coef, cov = linear_fit(np.asarray(eps, float) ** p, means, w)
    return Estimate(float(coef[0]), float(math.sqrt(cov[0, 0])), len(means))


def free_exponent_fit(eps, means, stderr):
    """Fit ``mean = L + b eps^p`` with p free; (L, p) or (None, None)."""
    eps = np.asarray(eps, float)
    means = np.asarray(means, float)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            popt, _ = optimize.curve_fit(
                lambda e, L, b, p: L + b * e ** p, eps, means,
                p0=(means[-1], 0.0, 0.5), sigma=stderr, absolute_sigma=True,
                bounds=([-np.inf, -np.inf, 0.05], [np.inf, np.inf, 3.0]), maxfev=20000,
            )
    except (RuntimeError, ValueError):
        return None, None
    return float(popt[0]), float(popt[2])


def minkowski_ladder(masses, eps_ladder, exponent: float, path_ids=None) -> LadderResult:
    """Ladder statistics from per-path masses of shape (paths, len(eps)).

    ``exponent`` is the power of eps in the extrapolation; the free-exponent
    fit is reported alongside as a diagnostic.
    """
    masses = np.asarray(masses, float)
    eps = np.asarray(eps_ladder, float)
    if eps.size < 4 or not np.allclose(eps[1:] / eps[:-1], 0.5):
        raise ContractError("ladder needs at least 4 entries, each half the previous")
    if path_ids is not None:
        order = np.argsort(np.asarray(path_ids), kind="stable")
        masses = masses[order]
    ests = [estimate(masses[:, j]) for j in range(eps.size)]
    d = np.diff(masses, axis=1)
    diffs = d.mean(axis=0)
    dse = d.std(axis=0, ddof=1) / math.sqrt(masses.shape[0])
    med = np.median(np.abs(d), axis=0)
    means = np.array([e.mean for e in ests])
    se = np.array([e.stderr for e in ests])
    limit = extrapolate(eps, means, se, exponent)
    fl, fp = free_exponent_fit(eps, means, se)
    notes = []
    if np.any(np.abs(np.diff(np.abs(diffs))) > 3 * (dse[1:] + dse[:-1])) and np.any(np.diff(np.abs(diffs)) > 0):
        notes.append("successive differences are not decreasing beyond Monte Carlo error")
    return LadderResult(eps, ests, diffs, dse, med, exponent, limit, fp, fl, notes)


# --------------------------------------------------------------------------
# covariant transform


def covariant_transform(x, mass, table, params: SleParams, rtol: float = 1e-12):
    """Push cells ``(x, mass)`` forward by a tabulated map.

    ``table`` is a triple of arrays ``(x, phi(x), phi'(x))`` that must contain
    every cell position.  Returns ``(phi(x), mass * |phi'(x)|^d)``.
    """
    x = np.asarray(x, float)
    mass = np.asarray(mass, float)
    tx, tphi, tdphi = (np.asarray(a, float) for a in table)
    order = np.argsort(tx)
    tx, tphi, tdphi = tx[order], tphi[order], tdphi[order]
    pos = np.clip(np.searchsorted(tx, x), 0, tx.size - 1)
    for shift in (0, -1):
        cand = np.clip(pos + shift, 0, tx.size - 1)
        better = np.abs(tx[cand] - x) < np.abs(tx[pos] - x)
        pos = np.where(better, cand, pos)
    miss = np.abs(tx[pos] - x) > rtol * np.maximum(np.abs(x), 1.0)
    if np.any(miss):
        raise ContractError(f"map table does not cover x = {x[miss][0]!r}")
    return tphi[pos], mass * np.abs(tdphi[pos]) ** params.d
