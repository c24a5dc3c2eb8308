"""Exponents shared by every formula in the package.

All of them are functions of the SLE parameter kappa through ``a = 2/kappa``.
"""

from __future__ import annotations

from dataclasses import dataclass


class ParameterDomainError(ValueError):
    """Raised when kappa lies outside the open interval (4, 8)."""


@dataclass(frozen=True)
class SleParams:
    kappa: float
    a: float
    beta: float
    d: float
    nu: float

    def __post_init__(self):
        if abs(self.beta + self.d - 1.0) > 1e-15:
            raise ValueError(f"beta + d = {self.beta + self.d!r}, expected 1")
        alt_nu = (12.0 - self.kappa) / (2.0 * self.kappa)
        if abs(alt_nu - self.nu) > 1e-15 * max(1.0, abs(self.nu)):
            raise ValueError(f"shape parameter mismatch: {self.nu!r} vs {alt_nu!r}")

    def as_dict(self) -> dict:
        """Manifest form, 17 significant digits."""
        return {k: float(f"{getattr(self, k):.17g}") for k in ("kappa", "a", "beta", "d", "nu")}


def derive_params(kappa: float) -> SleParams:
    """Build :class:`SleParams` for ``4 < kappa < 8``.

    >>> p = derive_params(6.0)
    >>> round(p.d, 12), round(p.nu, 12)
    (0.666666666667, 0.5)
    """
    kappa = float(kappa)
    if not 4.0 < kappa < 8.0:
        raise ParameterDomainError(f"kappa must lie in the open interval (4, 8), got {kappa}")
    a = 2.0 / kappa
    beta = 4.0 * a - 1.0
    d = 1.0 - beta
    nu = 3.0 * a - 0.5
    return SleParams(kappa=kappa, a=a, beta=beta, d=d, nu=nu)
