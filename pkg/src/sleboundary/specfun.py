"""Closed-form reference values.

The incomplete gamma function and the Gauss hypergeometric series are
implemented here directly; they are checked against quadrature and against
:mod:`scipy.special` in the test-suite.  The incomplete beta function needed
for the hitting probability is taken from SciPy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .params import SleParams

_EPS = 1e-16
_FPMIN = 1e-300
_MAXITER = 10_000


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ReferenceValue:
    value: float
    abs_error_bound: float

    def __post_init__(self):
        if not self.abs_error_bound >= 0:
            raise ValueError("abs_error_bound must be nonnegative")


# --------------------------------------------------------------------------
# regularized lower incomplete gamma


def _gamma_series(s: float, z: float) -> float:
    ap = s
    term = total = 1.0 / s
    for _ in range(_MAXITER):
        ap += 1.0
        term *= z / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-z + s * math.log(z) - math.lgamma(s))
    raise NumericalError(f"incomplete gamma series did not converge (s={s}, z={z})")


def _gamma_cfrac(s: float, z: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(s, z)
    b = z + 1.0 - s
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAXITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-z + s * math.log(z) - math.lgamma(s)) * h
    raise NumericalError(f"incomplete gamma continued fraction did not converge (s={s}, z={z})")


def _reg_lower_gamma_scalar(s: float, z: float) -> float:
    if not s > 0:
        raise ValueError(f"shape must be positive, got {s}")
    if z < 0 or math.isnan(z):
        raise ValueError(f"argument must be nonnegative, got {z}")
    if z == 0:
        return 0.0
    if math.isinf(z):
        return 1.0
    if z < s + 1.0:
        return min(1.0, _gamma_series(s, z))
    return max(0.0, 1.0 - _gamma_cfrac(s, z))


def reg_lower_gamma(s, z):
    """P(s, z) = gamma(s, z) / Gamma(s); scalar or array ``z``."""
    if np.ndim(s) == 0 and np.ndim(z) == 0:
        return _reg_lower_gamma_scalar(float(s), float(z))
    s_arr, z_arr = np.broadcast_arrays(np.asarray(s, float), np.asarray(z, float))
    out = np.empty(s_arr.shape)
    for idx in np.ndindex(s_arr.shape):
        out[idx] = _reg_lower_gamma_scalar(s_arr[idx], z_arr[idx])
    return out


def bessel_survival(drift: float, x, t):
    """Pr(T_x > t) for dh = (drift/h) dt + dW started at x, ``drift < 1/2``.

    ``x**2 / (2 T_x)`` is Gamma(1/2 - drift) distributed, so the survival
    function is a regularized lower incomplete gamma function.
    """
    if not drift < 0.5:
        raise ValueError("zero is not reached when drift >= 1/2")
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    if np.any(x <= 0) or np.any(t <= 0):
        raise ValueError("x and t must be positive")
    out = reg_lower_gamma(0.5 - drift, x * x / (2.0 * t))
    return float(out) if np.ndim(out) == 0 else out


def survival_probability(params: SleParams, x, t):
    """Q_x(T_x > t): survival of the Q_x-drifted process, drift 1 - 3a."""
    return bessel_survival(1.0 - 3.0 * params.a, x, t)


def swallow_survival(params: SleParams, x, t):
    """P(T_x > t) under the SLE law (drift a)."""
    return bessel_survival(params.a, x, t)


# --------------------------------------------------------------------------
# one-interval hitting probability


def hitting_probability(params: SleParams, rel):
    """F(rel) = I_rel(4a - 1, 1 - 2a), the regularized incomplete beta."""
    rel_arr = np.asarray(rel, float)
    if np.any(rel_arr < 0) or np.any(rel_arr >= 1) or np.any(np.isnan(rel_arr)):
        raise ValueError(f"relative argument must lie in [0, 1), got {rel}")
    out = special.betainc(4.0 * params.a - 1.0, 1.0 - 2.0 * params.a, rel_arr)
    return float(out) if np.ndim(out) == 0 else out


def interval_hit_probability(params: SleParams, x, y, convention: str = "right"):
    """Probability that the curve hits [x, y].

    ``convention="right"`` plugs ``(y - x) / y`` into F and is exact for all
    ``0 < x < y``.  ``convention="left"`` plugs ``(y - x) / x`` (only defined
    for ``y < 2x``).  The two agree to first order as ``y -> x``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(x <= 0) or np.any(y <= x):
        raise ValueError("need 0 < x < y")
    if convention == "right":
        rel = (y - x) / y
    elif convention == "left":
        rel = (y - x) / x
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return hitting_probability(params, rel)


def c_a(params: SleParams) -> float:
    a = params.a
    return math.exp(math.lgamma(2 * a) - math.lgamma(1 - 2 * a) - math.lgamma(4 * a))


# --------------------------------------------------------------------------
# two-point function


def _hyp2f1_series(a: float, b: float, c: float, w: float) -> float:
    term = total = 1.0
    for k in range(_MAXITER):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1)) * w
        total += term
        if abs(term) <= _EPS * abs(total):
            return total
    raise NumericalError(f"2F1 series did not converge at w={w}")


def _two_point_hyp(params: SleParams, w: float) -> float:
    """2F1(2a, 1-4a; 4a; w) for 0 <= w <= 1."""
    a = params.a
    if w <= 0.5:
        return _hyp2f1_series(2 * a, 1 - 4 * a, 4 * a, w)
    # Euler integral with the symmetric roles of the upper parameters swapped:
    # Gamma(4a)/Gamma(2a)^2 * int_0^1 t^(2a-1) (1-t)^(2a-1) (1-wt)^(4a-1) dt
    lognorm = math.lgamma(4 * a) - 2 * math.lgamma(2 * a)
    if w == 1.0:
        return math.exp(lognorm + math.lgamma(2 * a) + math.lgamma(6 * a - 1) - math.lgamma(8 * a - 1))
    val, _ = integrate.quad(
        lambda t: (1.0 - w * t) ** (4 * a - 1),
        0.0, 1.0, weight="alg", wvar=(2 * a - 1, 2 * a - 1), epsabs=1e-15, epsrel=1e-13,
    )
    return math.exp(lognorm) * val


def two_point_u(params: SleParams, z: float) -> float:
    """u(z) = (1-z)^(-beta) 2F1(2a, 1-4a; 4a; 1-z) on 0 < z <= 1.

    u blows up like (1-z)^(-beta) at z = 1, where ``inf`` is returned; the
    bounded companion is :func:`two_point_u_scaled`.
    """
    z = float(z)
    if not 0.0 < z <= 1.0:
        raise ValueError(f"two-point argument must lie in (0, 1], got {z}")
    if z == 1.0:
        return math.inf
    return (1.0 - z) ** (-params.beta) * _two_point_hyp(params, 1.0 - z)


def two_point_u_scaled(params: SleParams, z: float) -> float:
    """(1-z)^beta u(z); equals 1 at z = 1 and extends continuously to z = 0."""
    z = float(z)
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"argument must lie in [0, 1], got {z}")
    return _two_point_hyp(params, 1.0 - z)


def _q_on_grid(params: SleParams, n: int) -> tuple[float, float]:
    # closed grid: u extends continuously to z = 0, the scaled form to z = 1
    z = np.linspace(0.0, 1.0, n + 1)
    scaled = np.empty_like(z)
    for i, zi in enumerate(z):
        scaled[i] = two_point_u_scaled(params, zi)
        if not np.isfinite(scaled[i]):
            raise NumericalError(f"non-finite two-point value at z={zi}")
    u = scaled[:-1] * (1.0 - z[:-1]) ** (-params.beta)
    return float(u.min()), float(scaled.max())


def estimate_q_constants(params: SleParams, grid_size: int = 10_000) -> tuple[float, float]:
    """Return (q1, q2) = (inf u, sup (1-z)^beta u) over (0, 1).

    The grid is doubled once and both values must agree to 1e-6 relative.
    """
    if grid_size < 1000:
        raise ValueError("grid_size must be at least 1000")
    q1, q2 = _q_on_grid(params, grid_size)
    r1, r2 = _q_on_grid(params, 2 * grid_size)
    if abs(r1 - q1) > 1e-6 * abs(r1) or abs(r2 - q2) > 1e-6 * abs(r2):
        raise NumericalError(f"q constants not refinement-stable: ({q1}, {q2}) vs ({r1}, {r2})")
    return r1, r2


# --------------------------------------------------------------------------
# expected swallowed mass


def expected_swallowed_mass(params: SleParams, interval, t: float, quad_points: int = 200) -> ReferenceValue:
    """E[mu(I n K_t)] = int_I x^(-beta) (1 - Q_x(T_x > t)) dx.

    ``interval`` is anything with ``x1``/``x2`` attributes or a pair; the left
    end may be 0.  ``t = inf`` gives the total expected mass.
    """
    x1, x2 = _endpoints(interval)
    if not (0.0 <= x1 < x2):
        raise ValueError(f"invalid interval ({x1}, {x2}]")
    if not t > 0:
        raise ValueError("t must be positive")
    beta, d = params.beta, params.d
    if math.isinf(t):
        return ReferenceValue((x2 ** d - x1 ** d) / d, 4 * _EPS * x2 ** d / d)
    nu = params.nu

    def integrand(x):
        if x == 0.0:
            return 0.0
        return x ** (-beta) * (1.0 - _reg_lower_gamma_scalar(nu, x * x / (2.0 * t)))

    val, err = integrate.quad(integrand, x1, x2, limit=quad_points, epsabs=1e-12, epsrel=1e-11)
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise NumericalError(f"quadrature did not converge: value={val}, error={err}")
    return ReferenceValue(float(val), float(err) + 1e-13)


def _endpoints(interval) -> tuple[float, float]:
    if hasattr(interval, "x1"):
        return float(interval.x1), float(interval.x2)
    x1, x2 = interval
    return float(x1), float(x2)
