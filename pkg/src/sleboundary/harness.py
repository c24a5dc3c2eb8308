"""Run orchestration and file output.

A run is a pure function of its ``RunConfig``: every task maps path ids to
per-path rows, rows are gathered in path-id order, and every number is
written with a fixed format.  Only the manifest timestamps vary between
reruns.
"""

from __future__ import annotations

import csv
import functools
import json
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .flow import DriverRecord, FlowConfig, run_flow, swallow_order
from .measure import IntervalSpec, cell_grid, energy, extrapolate, geometric_grid, mu_eps_mass, run_cells
from .parallel import map_paths
from .params import derive_params
from .specfun import interval_hit_probability
from .stats import binomial_estimate, estimate
from .trace import sample_trace

SCHEMA_VERSION = 1
TASKS = ("flow", "measure", "hitting", "energy", "trace", "validate")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    kappa: float = 6.0
    n_paths: int = 100
    seed: int = 20240917
    tasks: tuple = ("flow",)
    xs_min: float = 1.0
    xs_max: float = 2.0
    xs_count: int = 320
    spacing: str = "uniform"
    eps_ladder: tuple = (0.2, 0.1, 0.05, 0.025)
    intervals: tuple = ((1.0, 2.0),)
    obs_times: tuple = (1.0,)
    dt_max: float = 1e-2
    dt_scale: float = 0.01
    kill_threshold: float | None = None
    t_max: float = 1e16
    output_dir: str = "out"
    validate_scale: float = 1.0
    validate_ids: tuple = ()
    workers: int | None = None

    def __post_init__(self):
        for name in ("tasks", "eps_ladder", "obs_times", "validate_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "intervals", tuple(tuple(float(v) for v in iv) for iv in self.intervals))
        bad = set(self.tasks) - set(TASKS)
        if bad:
            raise ConfigError(f"unknown tasks {sorted(bad)}")
        if self.n_paths < 2:
            raise ConfigError("n_paths must be at least 2")
        if self.spacing not in ("uniform", "geometric"):
            raise ConfigError("spacing must be uniform or geometric")
        if not 0 < self.xs_min < self.xs_max or self.xs_count < 1:
            raise ConfigError("need 0 < xs_min < xs_max and xs_count >= 1")
        if {"measure", "energy"} & set(self.tasks) and self.eps_ladder:
            if self.grid().widths.max() > min(self.eps_ladder) / 8 * (1 + 1e-9):
                raise ConfigError(f"grid spacing exceeds min(eps_ladder)/8 = {min(self.eps_ladder) / 8:g}")
        self.flow()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known - {"schema_version"}
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        d["schema_version"] = SCHEMA_VERSION
        return d

    def flow(self) -> FlowConfig:
        return FlowConfig(dt_max=self.dt_max, dt_scale=self.dt_scale, kill_threshold=self.kill_threshold, t_max=self.t_max)

    def grid(self):
        if self.spacing == "geometric":
            return geometric_grid(self.xs_min, self.xs_max, self.xs_count)
        return cell_grid([(self.xs_min, self.xs_max, self.xs_count)])

    def points(self) -> np.ndarray:
        return self.grid().centers


@dataclass
class RunOutput:
    output_dir: Path
    files: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    criteria: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.verdict for r in self.reports)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# --------------------------------------------------------------------------
# per-path tasks


def _flow_path(cfg: RunConfig, pid: int) -> dict:
    p = derive_params(cfg.kappa)
    xs = cfg.points()
    want_trace = "trace" in cfg.tasks
    r = run_flow(p, cfg.flow(), xs, DriverRecord(cfg.seed, pid), cfg.obs_times, record_steps=want_trace)
    snaps = []
    for s in r.snapshots:
        for i in range(xs.size):
            snaps.append((pid, s.t, xs[i], s.h[i] if s.alive[i] else 0.0, s.log_hp[i], s.alive[i]))
    order = swallow_order(r)
    out = {"swallow": [(pid, xs[i], r.swallow_time[i]) for i in range(xs.size)], "order": order, "snapshots": snaps}
    if want_trace:
        steps = [s.step_index for s in r.snapshots]
        t_end = max(cfg.obs_times) if cfg.obs_times else r.t_end
        tr = sample_trace(r.driver, p, t_end=t_end, n_tips=128, include_steps=steps)
        out["trace"] = [(pid, t, z.real, z.imag) for t, z in zip(tr.t, tr.tips)]
    return out


def _cells_path(cfg: RunConfig, pid: int) -> dict:
    p = derive_params(cfg.kappa)
    g = cfg.grid()
    c = run_cells(p, cfg.flow(), g, DriverRecord(cfg.seed, pid), cfg.eps_ladder, cfg.obs_times)
    alpha = p.d - 0.1
    mass, en = [], []
    for iv in cfg.intervals:
        I = IntervalSpec(*iv)
        for j, e in enumerate(cfg.eps_ladder):
            row = [pid, I.x1, I.x2, e, mu_eps_mass(c, j, I).mass]
            row += [mu_eps_mass(c, j, I, t).mass for t in cfg.obs_times]
            mass.append(tuple(row))
            if "energy" in cfg.tasks:
                en.append((pid, I.x1, I.x2, e, alpha, energy(c.masses(j), g, alpha, p, I)))
    return {"mass": mass, "energy": en, "alive": c.alive_fraction()}


# --------------------------------------------------------------------------
# aggregation


def _measure_summary(cfg: RunConfig, rows, d: float) -> dict:
    arr = np.array([r[1:5] for r in rows], dtype=float)
    out = []
    for iv in cfg.intervals:
        means, ses, per_eps = [], [], []
        for e in cfg.eps_ladder:
            sel = (arr[:, 0] == iv[0]) & (arr[:, 1] == iv[1]) & (arr[:, 2] == e)
            est = estimate(arr[sel, 3])
            means.append(est.mean)
            ses.append(est.stderr)
            per_eps.append({"eps": e, **est.as_dict()})
        entry = {"interval": list(iv), "ladder": per_eps}
        if len(cfg.eps_ladder) >= 2:
            entry["extrapolated"] = extrapolate(cfg.eps_ladder, np.array(means), np.array(ses), d).as_dict()
            entry["extrapolation_exponent"] = d
        out.append(entry)
    return {"schema_version": SCHEMA_VERSION, "intervals": out}


def _hitting_rows(cfg: RunConfig, orders):
    # compare death steps: swallow times of distinct late steps can be equal floats
    p = derive_params(cfg.kappa)
    xs = cfg.points()
    T = np.array(orders, dtype=float).reshape(cfg.n_paths, xs.size)
    rows = []
    for k in range(1, xs.size):
        est = binomial_estimate(T[:, 0] < T[:, k])
        tie = float(np.mean((T[:, 0] == T[:, k]) & np.isfinite(T[:, 0])))
        rows.append((xs[0], xs[k], est.mean, est.stderr, tie,
                     interval_hit_probability(p, xs[0], xs[k], "right"),
                     interval_hit_probability(p, xs[0], xs[k], "left")))
    return rows


def run(config: RunConfig, echo=None) -> RunOutput:
    """Execute every task of ``config`` and write its outputs."""
    started = datetime.now(timezone.utc).isoformat()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = RunOutput(out_dir)
    p = derive_params(config.kappa)
    ids = range(config.n_paths)
    tasks = set(config.tasks)

    if tasks & {"flow", "hitting", "trace"}:
        rows = map_paths(functools.partial(_flow_path, config), ids, config.workers)
        sw = [r for row in rows for r in row["swallow"]]
        if "flow" in tasks:
            res.files.append(_write_csv(out_dir / "swallow_times.csv", ("path_id", "x", "T_x"), sw))
            if config.obs_times:
                res.files.append(_write_csv(out_dir / "trajectory.csv", ("path_id", "t", "x", "h", "log_hp", "alive"),
                                            [r for row in rows for r in row["snapshots"]]))
        if "hitting" in tasks:
            res.files.append(_write_csv(out_dir / "hitting.csv",
                                        ("x", "y", "pr_strictly_before", "stderr", "tie_fraction", "F_right", "F_left"),
                                        _hitting_rows(config, [row["order"] for row in rows])))
        if "trace" in tasks:
            res.files.append(_write_csv(out_dir / "trace.csv", ("path_id", "t", "re", "im"),
                                        [r for row in rows for r in row["trace"]]))

    if tasks & {"measure", "energy"}:
        if not config.eps_ladder:
            raise ConfigError("measure and energy tasks need an eps ladder")
        rows = map_paths(functools.partial(_cells_path, config), ids, config.workers)
        mass = [r for row in rows for r in row["mass"]]
        if "measure" in tasks:
            head = ("path_id", "x1", "x2", "eps", "mu_eps") + tuple(f"A_eps_t{t:g}" for t in config.obs_times)
            res.files.append(_write_csv(out_dir / "measure.csv", head, mass))
            summary = _measure_summary(config, mass, p.d)
            summary["alive_fraction"] = float(np.mean([r["alive"] for r in rows]))
            res.files.append(_write_json(out_dir / "measure_summary.json", summary))
        if "energy" in tasks:
            res.files.append(_write_csv(out_dir / "energy.csv", ("path_id", "x1", "x2", "eps", "alpha", "energy"),
                                        [r for row in rows for r in row["energy"]]))

    if "validate" in tasks:
        from .validation import CRITERIA, SuiteConfig, run_suite

        sc = SuiteConfig(kappa=config.kappa, seed=config.seed, scale=config.validate_scale,
                         dt_scale=config.dt_scale, workers=config.workers)
        ids_v = config.validate_ids or tuple(CRITERIA)
        res.criteria = run_suite(sc, ids_v, echo=echo)
        res.reports = [r for c in res.criteria for r in c.reports]
        res.files.append(_write_json(out_dir / "validation.json", {
            "schema_version": SCHEMA_VERSION,
            "criteria": [{"test_id": c.test_id, "title": c.title, "verdict": "pass" if c.passed else "fail",
                          "summary": c.summary, "reports": [r.as_dict() for r in c.reports]} for c in res.criteria],
        }))

    manifest = {
        "schema_version": SCHEMA_VERSION, "config": config.as_dict(), "params": p.as_dict(),
        "code_version": __version__, "started": started, "finished": datetime.now(timezone.utc).isoformat(),
        "files": sorted(f.name for f in res.files),
    }
    res.files.append(_write_json(out_dir / "manifest.json", manifest))
    return res


__all__ = ["RunConfig", "RunOutput", "ConfigError", "run", "TASKS", "SCHEMA_VERSION"]
