"""Validation suite: every estimator against its closed-form reference.

Each criterion is a function ``(SuiteConfig) -> Criterion``.  Statistical
tolerances are ``3 stderr + reference error + allowance`` where the
allowance is the change in the statistic when the first 10% of the paths are
rerun at half the step scale.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .flow import DriverRecord, FlowConfig, q_process_death_time, restart_flow, run_flow, swallow_order
from .martingale import compute_M
from .measure import (
    IntervalSpec, cell_grid, doob_meyer_split, dyadic_max_mass, energy, extrapolate,
    free_exponent_fit, mu_eps_mass, quadrature_X, run_cells,
)
from .parallel import map_paths
from .params import SleParams, derive_params
from .specfun import (
    ReferenceValue, expected_swallowed_mass, interval_hit_probability, survival_probability,
)
from .stats import Estimate, binomial_estimate, estimate, linear_fit
from .trace import koebe_check, sample_trace

LADDER = (0.2, 0.1, 0.05, 0.025)
X_MIN = 1e-3


@dataclass(frozen=True)
class SuiteConfig:
    kappa: float = 6.0
    seed: int = 20240917
    scale: float = 1.0
    dt_scale: float = 0.01
    workers: int | None = None

    @property
    def params(self) -> SleParams:
        return derive_params(self.kappa)

    def paths(self, n: int, floor: int = 40) -> int:
        return max(floor, int(round(n * self.scale)))

    def flow(self, **kw) -> FlowConfig:
        return FlowConfig(dt_scale=self.dt_scale, **kw)

    def seed_for(self, test_id: str) -> int:
        ss = np.random.SeedSequence([self.seed, int(test_id)])
        return int(ss.generate_state(1, np.uint64)[0])

    def digest(self) -> str:
        d = asdict(self)
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ValidationReport:
    test_id: str
    check: str
    estimate: Estimate
    reference: ReferenceValue
    tolerance: float
    allowance: float
    kind: str                  # "two-sided", "upper", "lower"
    verdict: bool
    provenance: dict
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "test_id": self.test_id, "check": self.check, "estimate": self.estimate.as_dict(),
            "reference": {"value": self.reference.value, "abs_error_bound": self.reference.abs_error_bound},
            "tolerance": self.tolerance, "allowance": self.allowance, "kind": self.kind,
            "verdict": "pass" if self.verdict else "fail", "provenance": self.provenance, "note": self.note,
        }


@dataclass
class Criterion:
    test_id: str
    title: str
    reports: list = field(default_factory=list)
    summary: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.reports) and all(r.verdict for r in self.reports)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.test_id:>2} {self.title}: {self.summary}"


def _report(cfg: SuiteConfig, test_id, check, est: Estimate, ref: ReferenceValue, allowance=0.0,
            kind="two-sided", n_sigma=3.0, extra=0.0, note="") -> ValidationReport:
    tol = n_sigma * (est.stderr if math.isfinite(est.stderr) else 0.0) + ref.abs_error_bound + allowance + extra
    diff = est.mean - ref.value
    if kind == "two-sided":
        ok = abs(diff) <= tol
    elif kind == "upper":
        ok = diff <= tol
    elif kind == "lower":
        ok = diff >= -tol
    else:
        raise ValueError(kind)
    prov = {"seed": cfg.seed_for(test_id), "config_digest": cfg.digest(), "code_version": __version__}
    return ValidationReport(test_id, check, est, ref, tol, allowance, kind, bool(ok), prov, note)


def _exact(value: float, n: int) -> Estimate:
    return Estimate(float(value), 0.0, n)


def _sub_ids(n: int) -> list:
    return list(range(max(4, n // 10)))


def _allowance(coarse, fine) -> float:
    """|change of the mean| when the same path ids are rerun at dt_scale/2.

    The two runs draw different normals (the step sequence changes), so this
    includes Monte Carlo noise of the 10% subset; it is used as is.
    """
    return abs(float(np.mean(np.asarray(fine, float))) - float(np.mean(np.asarray(coarse, float))))


def _trend(values, eps):
    """Per-path least-squares slope of ``values`` against log(1/eps).

    Returns an Estimate of the mean slope; the per-path form keeps the
    correlation between ladder entries in the error bar.
    """
    x = -np.log(np.asarray(eps, float))
    c = (x - x.mean()) / np.sum((x - x.mean()) ** 2)
    return estimate(np.asarray(values, float) @ c)


# --------------------------------------------------------------------------
# 1. survival of the Q process


def _c1_path(params, fc, seed, pid):
    return q_process_death_time(params, 1.0, 4.0, fc, DriverRecord(seed, pid))


def criterion_1(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("1")
    n = cfg.paths(100_000)
    times = (0.25, 1.0, 4.0)
    fc = cfg.flow()
    death = np.array(map_paths(functools.partial(_c1_path, p, fc, seed), range(n), cfg.workers))
    sub = _sub_ids(n)
    death_h = np.array(map_paths(functools.partial(_c1_path, p, fc.halved(), seed), sub, cfg.workers))
    out = Criterion("1", "Q-process survival")
    parts = []
    for t in times:
        est = binomial_estimate(death > t)
        allow = _allowance(death[sub] > t, death_h > t)
        ref = ReferenceValue(survival_probability(p, 1.0, t), 1e-13)
        out.reports.append(_report(cfg, "1", f"survival t={t}", est, ref, allow))
        parts.append(f"t={t}: {est.mean:.4f}+-{est.stderr:.4f} vs {ref.value:.6f}")
    out.summary = "; ".join(parts) + f" (n={n})"
    return out


# --------------------------------------------------------------------------
# 2. stopped martingale mean


def _c2_path(params, fc, seed, pid):
    r = run_flow(params, fc, np.array([1.0]), DriverRecord(seed, pid), (0.25, 1.0, 4.0), (0.05,))
    return [compute_M(s, params, r.eps_ladder, r.eps_cross).stopped(0)[0] for s in r.snapshots]


def criterion_2(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("2")
    n = cfg.paths(10_000)
    fc = cfg.flow(t_max=4.0)
    vals = np.array(map_paths(functools.partial(_c2_path, p, fc, seed), range(n), cfg.workers))
    sub = _sub_ids(n)
    vals_h = np.array(map_paths(functools.partial(_c2_path, p, fc.halved(), seed), sub, cfg.workers))
    out = Criterion("2", "stopped martingale mean E[M^eps_t(1)] = 1")
    parts = []
    for k, t in enumerate((0.25, 1.0, 4.0)):
        est = estimate(vals[:, k])
        allow = _allowance(vals[sub, k], vals_h[:, k])
        out.reports.append(_report(cfg, "2", f"E[M^eps_{t}(1)]", est, ReferenceValue(1.0, 0.0), allow))
        parts.append(f"t={t}: {est.mean:.4f}+-{est.stderr:.4f}")
    out.summary = "; ".join(parts) + f" (eps=0.05, n={n})"
    return out


# --------------------------------------------------------------------------
# 3. hitting probability


HIT_POINTS = (1.0, 1.05, 1.1, 1.2, 1.4, 1.5)
HIT_KILL = 1e-18


def _c3_path(params, fc, seed, pid):
    return swallow_order(run_flow(params, fc, np.array(HIT_POINTS), DriverRecord(seed, pid)))


def hitting_table(params: SleParams, swallow: np.ndarray, sub_h=None, sub_ids=None):
    """Empirical Pr(T_1 strictly before T_y) per y, with tie fractions.

    ``swallow`` holds death step indices (inf if never), see ``swallow_order``.
    """
    rows = []
    for k, y in enumerate(HIT_POINTS[1:], start=1):
        strict = swallow[:, 0] < swallow[:, k]
        tie = (swallow[:, 0] == swallow[:, k]) & np.isfinite(swallow[:, 0])
        allow = 0.0
        if sub_h is not None:
            allow = _allowance(strict[sub_ids], sub_h[:, 0] < sub_h[:, k])
        rows.append({
            "y": y, "est": binomial_estimate(strict), "tie": float(tie.mean()), "allowance": allow,
            "right": interval_hit_probability(params, 1.0, y, "right"),
            "left": interval_hit_probability(params, 1.0, y, "left"),
        })
    return rows


def select_convention(rows) -> tuple[str, dict]:
    chi2 = {}
    for conv in ("right", "left"):
        chi2[conv] = float(sum(((r["est"].mean - r[conv]) / max(r["est"].stderr, 1e-12)) ** 2 for r in rows))
    return min(chi2, key=chi2.get), chi2


def criterion_3(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("3")
    n = cfg.paths(10_000)
    # joint swallowing of nearby points converges slowly in the kill level
    fc = cfg.flow(kill_threshold=HIT_KILL)
    sw = np.array(map_paths(functools.partial(_c3_path, p, fc, seed), range(n), cfg.workers))
    sub = _sub_ids(n)
    sw_h = np.array(map_paths(functools.partial(_c3_path, p, fc.halved(), seed), sub, cfg.workers))
    rows = hitting_table(p, sw, sw_h, sub)
    conv, chi2 = select_convention(rows)
    out = Criterion("3", "hitting probability")
    r15 = rows[-1]
    out.reports.append(_report(
        cfg, "3", f"Pr(T_1 < T_1.5) vs F[{conv}]", r15["est"], ReferenceValue(r15[conv], 1e-12), r15["allowance"],
        note=f"chi2 right={chi2['right']:.2f} left={chi2['left']:.2f}; tie fraction {r15['tie']:.4f}",
    ))
    small = [r for r in rows if round(r["y"] - 1.0, 6) in (0.05, 0.1, 0.2, 0.4)]
    e = np.log([r["y"] - 1.0 for r in small])
    pr = np.array([r["est"].mean for r in small])
    se = np.array([r["est"].stderr for r in small])
    coef, cov = linear_fit(e, np.log(pr), (pr / se) ** 2)
    slope = Estimate(float(coef[1]), float(math.sqrt(cov[1, 1])), n)
    out.reports.append(_report(cfg, "3", "log-log slope of Pr vs eps", slope, ReferenceValue(1.0 / 3.0, 0.0),
                               n_sigma=0.0, extra=0.05))
    out.summary = (f"Pr(T_1<T_1.5)={r15['est'].mean:.4f}+-{r15['est'].stderr:.4f} vs F={r15[conv]:.4f} "
                   f"[{conv} convention, chi2 R/L {chi2['right']:.1f}/{chi2['left']:.1f}]; "
                   f"slope {slope.mean:.3f} (target 1/3+-0.05); ties at 1.5: {r15['tie']:.4f} (n={n})")
    return out


# --------------------------------------------------------------------------
# 4. normalization on (x_min, 1]


GRID_A = None


def _grid_a():
    global GRID_A
    if GRID_A is None:
        GRID_A = cell_grid([(X_MIN, 1.0, 320)])
    return GRID_A


def _c4_path(params, fc, seed, pid):
    c = run_cells(params, fc, _grid_a(), DriverRecord(seed, pid), LADDER, skip_below=LADDER[-1])
    I = IntervalSpec(X_MIN, 1.0)
    return [mu_eps_mass(c, j, I).mass for j in range(len(LADDER))] + [c.alive_fraction(I)]


def normalization_limit(masses, exponent):
    means = masses.mean(axis=0)
    se = masses.std(axis=0, ddof=1) / math.sqrt(masses.shape[0])
    return extrapolate(LADDER, means, se, exponent), means, se


def criterion_4(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("4")
    n = cfg.paths(10_000)
    fc = cfg.flow()
    rows = np.array(map_paths(functools.partial(_c4_path, p, fc, seed), range(n), cfg.workers))
    sub = _sub_ids(n)
    rows_h = np.array(map_paths(functools.partial(_c4_path, p, fc.halved(), seed), sub, cfg.workers))
    m = len(LADDER)
    lim, means, se = normalization_limit(rows[:, :m], p.d)
    lim_sub, _, _ = normalization_limit(rows[sub, :m], p.d)
    lim_h, _, _ = normalization_limit(rows_h[:, :m], p.d)
    allow = abs(lim_h.mean - lim_sub.mean)
    lim_beta, _, _ = normalization_limit(rows[:, :m], p.beta)
    free_L, free_p = free_exponent_fit(LADDER, means, se)
    bias = X_MIN ** p.d / p.d
    target = 1.0 / p.d
    out = Criterion("4", "normalization E[mu((0,1])] = 1/d")
    out.reports.append(_report(
        cfg, "4", "extrapolated E[mu^eps((x_min,1])]", lim, ReferenceValue(target, 0.0), allow,
        extra=0.05 * target + bias,
        note=f"eps^d fit; eps^beta fit {lim_beta.mean:.4f}; free exponent {free_p} -> {free_L}",
    ))
    alive = float(rows[:, m].mean())
    out.reports.append(_report(cfg, "4", "alive fraction at the horizon", _exact(alive, n), ReferenceValue(0.0, 0.0),
                               kind="upper", n_sigma=0.0, extra=0.01))
    out.summary = (f"means {np.round(means, 4).tolist()}; limit {lim.mean:.4f}+-{lim.stderr:.4f} (eps^d fit) vs 1.5, "
                   f"band {0.05 * target + bias:.3f}; eps^beta fit {lim_beta.mean:.4f}; "
                   f"free exponent {free_p if free_p is None else round(free_p, 3)} (n={n})")
    return out


# --------------------------------------------------------------------------
# shared run on (1, 2] and (2, 4]: criteria 5, 6, 7, 11


GRID_B = None
I_B = IntervalSpec(1.0, 2.0)
I_2B = IntervalSpec(2.0, 4.0)
OBS_B = (0.25, 1.0, 4.0)


def _grid_b():
    global GRID_B
    if GRID_B is None:
        GRID_B = cell_grid([(1.0, 2.0, 320), (2.0, 4.0, 320)])
    return GRID_B


def _run_b_path(params, fc, seed, pid):
    g = _grid_b()
    c = run_cells(params, fc, g, DriverRecord(seed, pid), LADDER, OBS_B)
    m = len(LADDER)
    alpha = params.d - 0.1
    mu_I = [mu_eps_mass(c, j, I_B).mass for j in range(m)]
    mu_2I = [mu_eps_mass(c, j, I_2B).mass for j in range(m - 1)]
    A1 = [mu_eps_mass(c, j, I_B, 1.0).mass for j in range(m)]
    en = [energy(c.masses(j), g, alpha, params, I_B) for j in range(m)]
    res = 0.0
    for iv, js in ((I_B, range(m)), (I_2B, range(m - 1))):
        for j in js:
            sp = doob_meyer_split(c, iv, j)
            if sp.t.size:
                res = max(res, float(sp.residual().max()))
            if sp.A_eps.size and np.any(np.diff(sp.A_eps) < 0):
                res = math.inf
    alive = c.alive_fraction()
    return {"mu_I": mu_I, "mu_2I": mu_2I, "A1": A1, "energy": en, "split": res, "alive": alive, "n_snap": len(c.snap_t)}


class SharedRun:
    """Per-path summaries of the (1, 4] run, computed once per suite."""

    def __init__(self, cfg: SuiteConfig):
        self.cfg = cfg
        p = cfg.params
        seed = cfg.seed_for("5")
        self.n = cfg.paths(10_000)
        fc = cfg.flow()
        rows = map_paths(functools.partial(_run_b_path, p, fc, seed), range(self.n), cfg.workers)
        self.sub = _sub_ids(self.n)
        rows_h = map_paths(functools.partial(_run_b_path, p, fc.halved(), seed), self.sub, cfg.workers)
        self.rows = {k: np.array([r[k] for r in rows]) for k in rows[0]}
        self.rows_h = {k: np.array([r[k] for r in rows_h]) for k in rows_h[0]}


_SHARED: dict = {}


def shared_run(cfg: SuiteConfig) -> SharedRun:
    if cfg not in _SHARED:
        _SHARED.clear()
        _SHARED[cfg] = SharedRun(cfg)
    return _SHARED[cfg]


def criterion_5(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    sr = shared_run(cfg)
    A = sr.rows["A1"]
    ref = expected_swallowed_mass(p, I_B, 1.0)
    j = len(LADDER) - 1
    est = estimate(A[:, j])
    allow = _allowance(A[sr.sub, j], sr.rows_h["A1"][:, j])
    means = A.mean(axis=0)
    se = A.std(axis=0, ddof=1) / math.sqrt(sr.n)
    lim = extrapolate(LADDER, means, se, p.d)
    out = Criterion("5", "expected swallowed mass E[A^eps(1)] on (1,2]")
    out.reports.append(_report(cfg, "5", f"E[A^eps(1)] at eps={LADDER[-1]}", est, ref, allow,
                               note=f"eps^d extrapolation {lim.mean:.4f}+-{lim.stderr:.4f}"))
    out.summary = (f"E[A^eps(1)] per eps {np.round(means, 4).tolist()}; at eps={LADDER[-1]}: "
                   f"{est.mean:.4f}+-{est.stderr:.4f} vs {ref.value:.4f}; extrapolated {lim.mean:.4f} (n={sr.n})")
    return out


def criterion_6(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    sr = shared_run(cfg)
    r = 2.0 ** p.d
    out = Criterion("6", "scaling mu^eps(2I) = 2^d mu^(eps/2)(I)")
    parts = []
    for j in range(len(LADDER) - 1):
        d = sr.rows["mu_2I"][:, j] - r * sr.rows["mu_I"][:, j + 1]
        dh = sr.rows_h["mu_2I"][:, j] - r * sr.rows_h["mu_I"][:, j + 1]
        allow = _allowance(d[sr.sub], dh)
        est = estimate(d)
        out.reports.append(_report(cfg, "6", f"eps={LADDER[j]}", est, ReferenceValue(0.0, 0.0), allow))
        parts.append(f"eps={LADDER[j]}: {sr.rows['mu_2I'][:, j].mean():.4f} vs {r * sr.rows['mu_I'][:, j + 1].mean():.4f} "
                     f"(diff {est.mean:+.4f}+-{est.stderr:.4f})")
    out.summary = "; ".join(parts) + f" (n={sr.n})"
    return out


def criterion_7(cfg: SuiteConfig) -> Criterion:
    sr = shared_run(cfg)
    worst = float(sr.rows["split"].max())
    n_snap = int(sr.rows["n_snap"].sum())
    out = Criterion("7", "split identity X^eps + A^eps = int M^eps")
    out.reports.append(_report(cfg, "7", "max relative residual", _exact(worst, sr.n), ReferenceValue(0.0, 0.0),
                               kind="upper", n_sigma=0.0, extra=1e-12))
    out.summary = f"max relative residual {worst:.2e} over {n_snap} snapshots x 7 (interval, eps) pairs, {sr.n} paths"
    return out


def criterion_11(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    sr = shared_run(cfg)
    E = sr.rows["energy"]
    env = I_B.x1 ** (-p.beta) * I_B.length ** 1.1 / (0.1 * 1.1)
    means = E.mean(axis=0)
    c_hat = means / env
    spread = float(c_hat.max() / c_hat.min())
    tr = _trend(E / env, LADDER)
    out = Criterion("11", "energy boundedness")
    out.reports.append(_report(cfg, "11", "c-hat spread max/min", _exact(spread, sr.n), ReferenceValue(1.0, 0.0),
                               kind="upper", n_sigma=0.0, extra=0.25))
    out.reports.append(_report(cfg, "11", "trend of c-hat as eps decreases", tr, ReferenceValue(0.0, 0.0), kind="upper"))
    out.summary = (f"alpha=d-0.1, c-hat per eps {np.round(c_hat, 4).tolist()}, spread {spread:.3f} (<=1.25); "
                   f"slope vs log(1/eps) {tr.mean:+.4f}+-{tr.stderr:.4f} (n={sr.n})")
    return out


# --------------------------------------------------------------------------
# 8. commutation


COMMUTE_POINTS = (0.5, 1.0, 1.5, 2.0, 3.0)


def _c8_path(params, fc, seed, pid):
    r = run_flow(params, fc, np.array(COMMUTE_POINTS), DriverRecord(seed, pid), (1.0, 3.0), record_steps=True)
    s1, s3 = r.snapshots
    snaps, _ = restart_flow(params, fc, s1, r.driver, at_steps=[s3.step_index - s1.step_index])
    sr = snaps[0]
    sel = np.flatnonzero(s1.alive)
    a3 = s3.alive[sel]
    if not np.array_equal(a3, sr.alive):
        return math.inf, math.inf, 0
    if not a3.any():
        return 0.0, 0.0, 0
    h_direct = s3.h[sel][a3]
    h_res = float(np.abs(sr.h[sr.alive] - h_direct).max())
    lm_r = params.beta * (sr.log_hp[sr.alive] - np.log(sr.h[sr.alive])) + params.beta * s1.log_hp[sel][a3]
    lm_d = params.beta * (s3.log_hp[sel][a3] - np.log(h_direct))
    m_res = float(np.abs(np.expm1(lm_r - lm_d)).max())
    return h_res, m_res, int(a3.sum())


def criterion_8(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("8")
    n = cfg.paths(1000)
    fc = cfg.flow(t_max=3.0)
    rows = np.array(map_paths(functools.partial(_c8_path, p, fc, seed), range(n), cfg.workers))
    h_res = float(rows[:, 0].max())
    m_res = float(rows[:, 1].max())
    out = Criterion("8", "commutation of the restarted flow")
    out.reports.append(_report(cfg, "8", "flow residual (bitwise)", _exact(h_res, n), ReferenceValue(0.0, 0.0),
                               kind="upper", n_sigma=0.0))
    out.reports.append(_report(cfg, "8", "field residual (relative)", _exact(m_res, n), ReferenceValue(0.0, 0.0),
                               kind="upper", n_sigma=0.0, extra=1e-12))
    out.summary = (f"t=1, s=2: max |h_(t,s)(h_t(x)) - h_(t+s)(x)| = {h_res:.1e}, max field residual {m_res:.2e} "
                   f"over {int(rows[:, 2].sum())} (path, point) pairs, {n} paths")
    return out


# --------------------------------------------------------------------------
# 9. two-point envelope


TWO_POINT_EPS = (0.1, 0.05, 0.025)


def _c9_path(params, fc, seed, pid):
    r = run_flow(params, fc, np.array([1.0, 1.5]), DriverRecord(seed, pid), (1.0,), TWO_POINT_EPS)
    s = compute_M(r.snapshots[0], params, r.eps_ladder, r.eps_cross)
    return [s.stopped(j)[0] * s.stopped(j)[1] for j in range(len(TWO_POINT_EPS))]


def criterion_9(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("9")
    n = cfg.paths(10_000)
    fc = cfg.flow(t_max=1.0)
    prod = np.array(map_paths(functools.partial(_c9_path, p, fc, seed), range(n), cfg.workers))
    env = 1.0 ** (-p.beta) * 0.5 ** (-p.beta)
    ratio = prod / env
    tr = _trend(ratio, TWO_POINT_EPS)
    out = Criterion("9", "two-point envelope")
    out.reports.append(_report(cfg, "9", "trend of the ratio as eps decreases", tr, ReferenceValue(0.0, 0.0), kind="upper"))
    lit = Estimate(-tr.mean, tr.stderr, tr.n)
    out.reports.append(_report(cfg, "9", "slope of the ratio vs log eps", lit, ReferenceValue(0.0, 0.0), kind="upper",
                               note="literal reading; together with the line above this requires a flat ratio"))
    means = ratio.mean(axis=0)
    out.summary = (f"ratio per eps {np.round(means, 4).tolist()}; slope vs log(1/eps) {tr.mean:+.4f}+-{tr.stderr:.4f} "
                   f"(both signs must stay within 3 sigma) "
                   f"(x=1, y=1.5, t=1, n={n})")
    return out


# --------------------------------------------------------------------------
# 10. Koebe distance bound


KOEBE_POINTS = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0)
KOEBE_TIMES = (0.25, 0.5, 1.0, 2.0)
KOEBE_EPS = 0.1


def _c10_path(params, fc, seed, pid):
    r = run_flow(params, fc, np.array(KOEBE_POINTS), DriverRecord(seed, pid), KOEBE_TIMES, (KOEBE_EPS,),
                 record_steps=True)
    if not r.driver.dt.size:
        return []
    tr = sample_trace(r.driver, params, t_end=KOEBE_TIMES[-1] * 2,
                      include_steps=[s.step_index for s in r.snapshots])
    out = []
    for s in r.snapshots:
        for i in np.flatnonzero(s.alive):
            ratio, slack, dist, gap = koebe_check(s, tr, int(i))
            crossed = bool(np.isfinite(r.eps_cross[0, i]) and r.eps_cross[0, i] <= s.t)
            out.append((ratio, slack, dist, gap, crossed))
    return out


def criterion_10(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("10")
    target = cfg.paths(1000, floor=100)
    fc = cfg.flow(t_max=KOEBE_TIMES[-1])
    samples = []
    pid = 0
    while len(samples) < target:
        batch = map_paths(functools.partial(_c10_path, p, fc, seed), range(pid, pid + 50), cfg.workers)
        for b in batch:
            samples.extend(b)
        pid += 50
    s = np.array(samples[:target], dtype=float)
    ratio, slack, dist, gap, crossed = s.T
    viol = int(np.sum(ratio > 1.0 + slack))
    crossed = crossed.astype(bool)
    viol_eps = int(np.sum(dist[crossed] > 4 * KOEBE_EPS + 2 * gap[crossed]))
    out = Criterion("10", "Koebe distance bound")
    out.reports.append(_report(cfg, "10", "violations of dist <= 4h/h' (1 + slack)", _exact(viol, target),
                               ReferenceValue(0.0, 0.0), kind="upper", n_sigma=0.0))
    out.reports.append(_report(cfg, "10", "violations of dist <= 4 eps + slack on C_t^eps", _exact(viol_eps, int(crossed.sum())),
                               ReferenceValue(0.0, 0.0), kind="upper", n_sigma=0.0))
    out.summary = (f"{target} samples from {pid} paths: max ratio {ratio.max():.3f}, median slack {np.median(slack):.3f}, "
                   f"violations {viol}; C_t^eps samples {int(crossed.sum())}, violations {viol_eps}")
    return out


# --------------------------------------------------------------------------
# 12. second-moment exponent


GRID_D = None
DYADIC_LENGTHS = (0.5, 0.25, 0.125, 0.0625)


def _grid_d():
    global GRID_D
    if GRID_D is None:
        GRID_D = cell_grid([(1.0, 1.5, 512)])
    return GRID_D


def _c12_path(params, fc, seed, pid):
    g = _grid_d()
    c = run_cells(params, fc, g, DriverRecord(seed, pid), (), (1.0,))
    M = np.exp(c.snap_log_m[0])
    return [quadrature_X(M, g, (1.0, 1.0 + L)) for L in DYADIC_LENGTHS]


def second_moment_slope(X) -> Estimate:
    """Slope of log E[X^2] against log |I|, error bar from the per-path linearisation."""
    X2 = np.asarray(X, float) ** 2
    m = X2.mean(axis=0)
    x = np.log(DYADIC_LENGTHS)
    c = (x - x.mean()) / np.sum((x - x.mean()) ** 2)
    slope = float(c @ np.log(m))
    infl = (X2 / m) @ c
    return Estimate(slope, float(infl.std(ddof=1) / math.sqrt(X2.shape[0])), X2.shape[0])


def criterion_12(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("12")
    n = cfg.paths(10_000)
    fc = cfg.flow(t_max=1.0)
    X = np.array(map_paths(functools.partial(_c12_path, p, fc, seed), range(n), cfg.workers))
    slope = second_moment_slope(X)
    out = Criterion("12", "second-moment exponent 1 + d")
    out.reports.append(_report(cfg, "12", "slope of log E[X_1(I)^2] vs log|I|", slope, ReferenceValue(1.0 + p.d, 0.0),
                               n_sigma=0.0, extra=0.15))
    bound = (X ** 2).mean(axis=0) / np.asarray(DYADIC_LENGTHS) ** (1 + p.d)
    out.summary = (f"E[X^2] per |I| {np.round((X ** 2).mean(axis=0), 5).tolist()}; slope {slope.mean:.3f}+-{slope.stderr:.3f} "
                   f"(E[X^2]/|I|^(1+d) = {np.round(bound, 3).tolist()}, bounded as the upper bound requires) "
                   f"vs {1 + p.d:.4f}+-0.15 (I=(1,1+|I|], t=1, n={n})")
    return out


# --------------------------------------------------------------------------
# 13. dyadic max mass


GRID_C = None
DYADIC_EPS = 0.025
DYADIC_NMAX = 8
DYADIC_ALPHA = 0.25


def _grid_c():
    global GRID_C
    if GRID_C is None:
        GRID_C = cell_grid([(1.0, 2.0, 2048)])
    return GRID_C


def _c13_path(params, fc, seed, pid):
    g = _grid_c()
    c = run_cells(params, fc, g, DriverRecord(seed, pid), (DYADIC_EPS,))
    return dyadic_max_mass(c.masses(0), g, I_B, DYADIC_NMAX)


def criterion_13(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("13")
    n = cfg.paths(1000)
    fc = cfg.flow()
    mx = np.array(map_paths(functools.partial(_c13_path, p, fc, seed), range(n), cfg.workers))
    bad = int(np.sum(mx[:, 1:] > mx[:, :-1] * (1 + 1e-12)))
    levels = np.arange(2, DYADIC_NMAX + 1)
    viol = mx[:, levels] >= 2.0 ** (-levels * DYADIC_ALPHA)
    freq = viol.mean(axis=0)
    se = np.sqrt(freq * (1 - freq) / n)
    ups = np.diff(freq) - 3 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    tr = _trend(viol.astype(float), 2.0 ** (-levels))
    out = Criterion("13", "dyadic max mass")
    out.reports.append(_report(cfg, "13", "parent-child monotonicity violations", _exact(bad, n),
                               ReferenceValue(0.0, 0.0), kind="upper", n_sigma=0.0))
    out.reports.append(_report(cfg, "13", "largest significant rise of the violation frequency",
                               _exact(float(ups.max()), n), ReferenceValue(0.0, 0.0), kind="upper", n_sigma=0.0))
    out.reports.append(_report(cfg, "13", "trend of the violation frequency in n", tr, ReferenceValue(0.0, 0.0), kind="upper"))
    out.summary = (f"monotonicity violations {bad}; violation frequency n=2..8 {np.round(freq, 4).tolist()}; "
                   f"trend {tr.mean:+.4f}+-{tr.stderr:.4f} (alpha={DYADIC_ALPHA}, eps={DYADIC_EPS}, n={n})")
    return out


# --------------------------------------------------------------------------
# 14. martingale windows


GRID_E = None
WINDOW_EPS = 0.1
WINDOW_T = 4.0
N_WINDOWS = 3


def _grid_e():
    global GRID_E
    if GRID_E is None:
        GRID_E = cell_grid([(1.0, 2.0, 128)])
    return GRID_E


def _value_at(t_rows, vals, s, v0):
    k = int(np.searchsorted(t_rows, s, side="right")) - 1
    return v0 if k < 0 else float(vals[k])


def window_statistics(t, Y, X, A, X0, eps, t_obs):
    """Z_n = X(t ^ tau_{2n+1}) - X(t ^ tau_{2n}) for n < N_WINDOWS, and the
    A growth on downcrossing windows of Y between 4 eps and 8 eps."""
    from .flow import crossing_times

    tau = np.concatenate([[0.0], crossing_times(t, Y, eps)])
    Z = []
    for k in range(N_WINDOWS):
        lo = tau[2 * k] if 2 * k < tau.size else math.inf
        hi = tau[2 * k + 1] if 2 * k + 1 < tau.size else math.inf
        a = _value_at(t, X, min(t_obs, lo), X0)
        b = _value_at(t, X, min(t_obs, hi), X0)
        Z.append(b - a)
    tau_y = np.concatenate([[0.0], crossing_times(t, Y, 4 * eps)])
    steps = grow = 0
    dA = np.diff(np.concatenate([[A[0]], A]))
    for k in range(0, tau_y.size, 2):
        lo = tau_y[k]
        hi = tau_y[k + 1] if k + 1 < tau_y.size else math.inf
        inside = (t > lo) & (t < hi)
        steps += int(inside.sum())
        grow += int(np.sum(dA[inside] > 0))
    return Z, steps, grow


def _c14_path(params, fc, seed, pid):
    g = _grid_e()
    c = run_cells(params, fc, g, DriverRecord(seed, pid), (WINDOW_EPS,), monitor_interval=I_B)
    m = c.monitor
    X0 = float(np.sum(g.widths * g.centers ** (-params.beta)))
    Z, steps, grow = window_statistics(m[:, 0], m[:, 1], m[:, 2], m[:, 4], X0, WINDOW_EPS, WINDOW_T)
    return Z + [steps, grow]


def criterion_14(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("14")
    n = cfg.paths(2000)
    fc = cfg.flow(t_max=WINDOW_T)
    rows = np.array(map_paths(functools.partial(_c14_path, p, fc, seed), range(n), cfg.workers))
    sub = _sub_ids(n)
    rows_h = np.array(map_paths(functools.partial(_c14_path, p, fc.halved(), seed), sub, cfg.workers))
    out = Criterion("14", "martingale windows")
    parts = []
    for k in range(N_WINDOWS):
        est = estimate(rows[:, k])
        allow = _allowance(rows[sub, k], rows_h[:, k])
        out.reports.append(_report(cfg, "14", f"E[Z_{k}]", est, ReferenceValue(0.0, 0.0), allow))
        parts.append(f"Z_{k}={est.mean:+.4f}+-{est.stderr:.4f}")
    steps = int(rows[:, N_WINDOWS].sum())
    grow = int(rows[:, N_WINDOWS + 1].sum())
    frac = grow / max(steps, 1)
    out.reports.append(_report(cfg, "14", "fraction of window steps with A growth", _exact(frac, steps),
                               ReferenceValue(0.0, 0.0), kind="upper", n_sigma=0.0, extra=0.01))
    out.summary = "; ".join(parts) + f"; A growth in {grow}/{steps} window steps (eps={WINDOW_EPS}, t={WINDOW_T}, n={n})"
    return out


# --------------------------------------------------------------------------
# 15. terminal decay


def _c15_path(params, fc, seed, pid):
    return float(run_flow(params, fc, np.array([1.0]), DriverRecord(seed, pid)).last_log_m[0])


def criterion_15(cfg: SuiteConfig) -> Criterion:
    p = cfg.params
    seed = cfg.seed_for("15")
    n = cfg.paths(2000)
    fc = cfg.flow()
    lm = np.array(map_paths(functools.partial(_c15_path, p, fc, seed), range(n), cfg.workers))
    lm_h = np.array(map_paths(functools.partial(_c15_path, p, fc.halved(), seed), range(n), cfg.workers))
    thr = math.log(0.05)
    below = binomial_estimate(lm < thr)
    below_h = binomial_estimate(lm_h < thr)
    out = Criterion("15", "terminal decay of M")
    out.reports.append(_report(cfg, "15", "fraction with last M < 0.05 x^-beta", below, ReferenceValue(0.95, 0.0),
                               kind="lower", n_sigma=0.0))
    out.reports.append(_report(cfg, "15", "change of that fraction under dt_scale/2",
                               Estimate(below_h.mean - below.mean, 0.0, n), ReferenceValue(0.0, 0.0),
                               kind="lower", n_sigma=0.0))
    out.summary = (f"fraction below 0.05: {below.mean:.4f} at dt_scale={fc.dt_scale}, {below_h.mean:.4f} at "
                   f"{fc.dt_scale / 2} (need >= 0.95 and improving); median last M {np.exp(np.median(lm)):.4f} -> "
                   f"{np.exp(np.median(lm_h)):.4f} (n={n})")
    return out


# --------------------------------------------------------------------------
# 16. determinism


def criterion_16(cfg: SuiteConfig) -> Criterion:
    from .harness import RunConfig, run

    digests = []
    # both runs write to the same directory (the manifest echoes it), which is
    # hashed and cleared in between
    with tempfile.TemporaryDirectory() as tmp:
        for _ in range(2):
            rc = RunConfig(
                kappa=cfg.kappa, n_paths=6, seed=cfg.seed_for("16"),
                tasks=("flow", "measure", "hitting", "energy", "trace"),
                xs_min=1.0, xs_max=2.0, xs_count=160, eps_ladder=(0.2, 0.1, 0.05),
                intervals=((1.0, 2.0),), obs_times=(0.5, 1.0), output_dir=str(Path(tmp) / "out"),
                dt_scale=cfg.dt_scale,
            )
            run(rc)
            digests.append(_dir_digest(Path(rc.output_dir)))
            shutil.rmtree(rc.output_dir)
    same = digests[0] == digests[1]
    files = len(digests[0])
    out = Criterion("16", "determinism")
    out.reports.append(_report(cfg, "16", "differing output files", _exact(0 if same else sum(
        digests[0].get(k) != digests[1].get(k) for k in set(digests[0]) | set(digests[1])), 2),
        ReferenceValue(0.0, 0.0), kind="upper", n_sigma=0.0))
    out.summary = f"two runs, {files} output files compared byte for byte (manifest timestamps excluded): " + (
        "identical" if same else "DIFFERENT")
    return out


def _dir_digest(path: Path) -> dict:
    out = {}
    for f in sorted(path.rglob("*")):
        if not f.is_file():
            continue
        data = f.read_bytes()
        if f.name == "manifest.json":
            m = json.loads(data)
            m.pop("started", None)
            m.pop("finished", None)
            data = json.dumps(m, sort_keys=True).encode()
        out[str(f.relative_to(path))] = hashlib.sha256(data).hexdigest()
    return out


CRITERIA = {
    "1": criterion_1, "2": criterion_2, "3": criterion_3, "4": criterion_4, "5": criterion_5,
    "6": criterion_6, "7": criterion_7, "8": criterion_8, "9": criterion_9, "10": criterion_10,
    "11": criterion_11, "12": criterion_12, "13": criterion_13, "14": criterion_14, "15": criterion_15,
    "16": criterion_16,
}


def run_suite(cfg: SuiteConfig, ids=None, echo=None) -> list:
    out = []
    for k in (ids or CRITERIA):
        c = CRITERIA[str(k)](cfg)
        if echo is not None:
            echo(c.line())
        out.append(c)
    return out


__all__ = ["SuiteConfig", "ValidationReport", "Criterion", "CRITERIA", "run_suite"]
