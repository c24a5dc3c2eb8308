"""Sample means with error bars and order-independent reductions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n}


def estimate(values, path_ids=None) -> Estimate:
    """Mean and stderr (sample std / sqrt n).

    When ``path_ids`` is given the values are first sorted by path id, so
    the result does not depend on the order in which paths finished.
    """
    v = np.asarray(values, dtype=float).ravel()
    if path_ids is not None:
        order = np.argsort(np.asarray(path_ids), kind="stable")
        v = v[order]
    n = v.size
    if n == 0:
        raise ValueError("no samples")
    mean = math.fsum(v) / n
    if n == 1:
        return Estimate(mean, math.inf, 1)
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return Estimate(mean, math.sqrt(var / n), n)


def binomial_estimate(flags) -> Estimate:
    f = np.asarray(flags, dtype=bool).ravel()
    n = f.size
    p = f.sum() / n
    return Estimate(float(p), math.sqrt(max(p * (1 - p), 0.0) / n), n)


def linear_fit(x, y, w=None):
    """Weighted least squares y = c0 + c1 x; returns (coef, cov)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = np.ones_like(x) if w is None else np.asarray(w, float)
    A = np.column_stack([np.ones_like(x), x])
    Aw = A * w[:, None]
    cov = np.linalg.inv(A.T @ Aw)
    coef = cov @ (Aw.T @ y)
    return coef, cov
