"""
Barotropic pressure laws built from power terms, p(rho) = sum_k c_k rho**g_k.
Internal energies satisfy e'(rho) = p(rho)/rho**2 with e(1) = 0.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from src.services.errors import ModelParameterError, UnknownModelError

GAS_FAMILIES = ("polytropic-linear", "two-polytrope")


@dataclass(frozen=True)
class PowerLawPressure:
    terms: tuple[tuple[float, float], ...]  # (coefficient, exponent)

    def simplified(self) -> "PowerLawPressure":
        merged: dict[float, float] = {}
        for c, g in self.terms:
            merged[g] = merged.get(g, 0.0) + c
        return PowerLawPressure(tuple((c, g) for g, c in sorted(merged.items()) if c != 0.0))

    def __add__(self, other: "PowerLawPressure") -> "PowerLawPressure":
        return PowerLawPressure(self.terms + other.terms).simplified()

    def __sub__(self, other: "PowerLawPressure") -> "PowerLawPressure":
        return PowerLawPressure(self.terms + tuple((-c, g) for c, g in other.terms)).simplified()

    @property
    def is_monomial(self) -> bool:
        return len(self.terms) == 1

    def pressure(self, rho):
        rho = np.asarray(rho, dtype=float)
        return sum(c * rho**g for c, g in self.terms)

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        return sum(c * g * rho ** (g - 1.0) for c, g in self.terms)

    def second_derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        return sum(c * g * (g - 1.0) * rho ** (g - 2.0) for c, g in self.terms)

    def energy(self, rho):
        rho = np.asarray(rho, dtype=float)
        total = np.zeros_like(rho)
        for c, g in self.terms:
            if g == 1.0:
                total = total + c * np.log(rho)
            else:
                total = total + c * (rho ** (g - 1.0) - 1.0) / (g - 1.0)
        return total

    def inverse(self, value, bracket: tuple[float, float]):
        """rho with p(rho) = value; p must be increasing on the bracket."""
        value = np.asarray(value, dtype=float)
        if self.is_monomial:
            c, g = self.terms[0]
            with np.errstate(invalid="ignore"):
                return (value / c) ** (1.0 / g)
        lo, hi = bracket

        def solve(v: float) -> float:
            return brentq(lambda r: float(self.pressure(r)) - v, lo, hi, xtol=1e-15)

        return np.vectorize(solve, otypes=[float])(value)

    def describe(self) -> str:
        return " + ".join(f"{c:g}*rho^{g:g}" for c, g in self.terms) or "0"


def gas_laws(family: str, params: dict | None = None) -> tuple[PowerLawPressure, PowerLawPressure]:
    """(p_I, p_E) for a named family."""
    params = dict(params or {})
    if family == "polytropic-linear":
        kappa = float(params.pop("kappa", 1.0))
        gamma = float(params.pop("gamma", 2.0))
        a = float(params.pop("a", 1.0))
        if kappa <= 0 or gamma <= 0 or a <= 0:
            raise ModelParameterError(f"polytropic-linear needs kappa, gamma, a > 0, got {kappa}, {gamma}, {a}")
        p_E = PowerLawPressure(((kappa, gamma),))
        p_I = p_E + PowerLawPressure(((a, 1.0),))
    elif family == "two-polytrope":
        kappa_I = float(params.pop("kappa_I", 1.0))
        gamma_I = float(params.pop("gamma_I", 3.0))
        kappa_E = float(params.pop("kappa_E", 0.05))
        gamma_E = float(params.pop("gamma_E", 1.0))
        if min(kappa_I, gamma_I, kappa_E, gamma_E) <= 0:
            raise ModelParameterError("two-polytrope needs positive coefficients and exponents")
        p_I = PowerLawPressure(((kappa_I, gamma_I),))
        p_E = PowerLawPressure(((kappa_E, gamma_E),))
    else:
        raise UnknownModelError(f"unknown gas family '{family}', expected one of {GAS_FAMILIES}")
    if params:
        raise ModelParameterError(f"unexpected parameters for {family}: {sorted(params)}")
    return p_I, p_E
