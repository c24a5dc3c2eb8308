"""The boundary field M_t(x) = (h_t'(x) / h_t(x))^beta and its stopped versions.

M is kept in log space until read out.  Dead points carry M = 0.  The field
stopped at level eps is frozen at exactly ``eps**-beta`` from the first step
at which ``h / h' <= eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import FlowResult, FlowState, log_m
from .params import SleParams
from .stats import Estimate, estimate


@dataclass
class MartingaleSnapshot:
    t: float
    points: np.ndarray
    log_M: np.ndarray
    eps: np.ndarray
    T_eps: np.ndarray    # (len(eps), n); inf if not crossed by t
    beta: float

    @property
    def M(self) -> np.ndarray:
        return np.exp(self.log_M)

    @property
    def crossed(self) -> np.ndarray:
        return np.isfinite(self.T_eps) & (self.T_eps <= self.t)

    def stopped(self, j: int = 0) -> np.ndarray:
        """M_t^eps for ladder entry ``j``."""
        cap = self.eps[j] ** (-self.beta)
        return np.where(self.crossed[j], cap, np.minimum(self.M, cap))

    def eps_sets(self, j: int = 0) -> "EpsilonSets":
        return EpsilonSets(float(self.eps[j]), self.crossed[j].copy(), None)


@dataclass
class EpsilonSets:
    eps: float
    in_C_t_eps: np.ndarray
    in_C_eps: np.ndarray | None = None


def compute_M(state: FlowState, params: SleParams, eps_ladder=(), eps_cross=None) -> MartingaleSnapshot:
    """Field at a snapshot; ``eps_cross`` are the first-crossing times of a run."""
    eps = np.asarray(eps_ladder, float).ravel()
    if eps_cross is None:
        T = np.full((eps.size, state.points.size), np.inf)
    else:
        T = np.where(eps_cross <= state.t, eps_cross, np.inf)
    return MartingaleSnapshot(state.t, state.points, log_m(state, params.beta), eps, T, params.beta)


def snapshots_M(result: FlowResult, params: SleParams) -> list[MartingaleSnapshot]:
    return [compute_M(s, params, result.eps_ladder, result.eps_cross) for s in result.snapshots]


def track_stopping(result: FlowResult):
    """Per ladder entry and point: ``T_x^eps`` (capped by ``T_x``) and the terminal stopped value.

    The terminal value is ``eps**-beta`` on ``C^eps`` and the last alive M
    otherwise (which tends to 0 as the step is refined).
    """
    eps = result.eps_ladder
    T = np.minimum(result.eps_cross, result.swallow_time[None, :])
    cap = eps[:, None] ** (-result.beta)
    crossed = np.isfinite(result.eps_cross)
    alive_final = result.final.alive
    m_final = np.exp(log_m(result.final, result.beta))
    terminal = np.where(alive_final, m_final, np.exp(result.last_log_m))
    value = np.where(crossed, cap, np.minimum(terminal[None, :], cap))
    return T, value


def final_eps_sets(result: FlowResult, j: int = 0) -> EpsilonSets:
    crossed = np.isfinite(result.eps_cross[j])
    return EpsilonSets(float(result.eps_ladder[j]), crossed, crossed.copy())


def one_point_mean(values, path_ids=None) -> Estimate:
    """Estimate of E[M_t(x)] from per-path values (use ``snapshot.M[i]``)."""
    return estimate(values, path_ids)


def two_point_stats(mx, my, cx, cy, x: float, y: float, beta: float, path_ids=None):
    """E[M^eps(x) M^eps(y)], Pr(x, y both in C^eps) and the ratio to x^-beta (y-x)^-beta.

    ``mx, my`` are per-path stopped values, ``cx, cy`` per-path crossing flags.
    """
    if not 0 < x < y:
        raise ValueError("need 0 < x < y")
    env = x ** (-beta) * (y - x) ** (-beta)
    prod = estimate(np.asarray(mx) * np.asarray(my), path_ids)
    both = estimate(np.asarray(cx, bool) & np.asarray(cy, bool), path_ids)
    ratio = Estimate(prod.mean / env, prod.stderr / env, prod.n)
    return {"product": prod, "both_crossed": both, "ratio": ratio, "envelope": env}
