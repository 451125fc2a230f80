"""
Embedded oracles: closed forms of the quadratic model and of the default gas family,
evaluated end to end through the library.

`run_selftest(perturb={"quadratic.gamma_v": 1.01})` scales the named internal
constant before evaluation; the oracles that depend on it must then fail.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from src.services import diagnostics, entropy, gasdyn, minors
from src.services.constitutive import builtin_model

logger = logging.getLogger(__name__)

KNOBS = {
    "quadratic.gamma_E": 3.5,
    "quadratic.gamma_v": 0.5,
    "gas.a": 1.0,
    "gas.kappa": 1.0,
}


@dataclass
class OracleResult:
    name: str
    module: str
    invariant: str
    passed: bool
    error: float
    tolerance: float
    duration_ms: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Oracle:
    name: str
    module: str
    invariant: str
    tolerance: float
    evaluate: Callable[[dict], float]


class OracleRegistry:
    def __init__(self):
        self._oracles: list[Oracle] = []

    def register(self, name: str, module: str, invariant: str, tolerance: float):
        def decorator(func: Callable[[dict], float]):
            self._oracles.append(Oracle(name, module, invariant, tolerance, func))
            return func

        return decorator

    @property
    def names(self) -> list[str]:
        return [o.name for o in self._oracles]

    def run(self, perturb: dict[str, float] | None = None, stop_on_failure: bool = False) -> list[OracleResult]:
        unknown = set(perturb or {}) - set(KNOBS)
        if unknown:
            raise KeyError(f"unknown selftest constants: {sorted(unknown)}")
        knobs = {key: value * (perturb or {}).get(key, 1.0) for key, value in KNOBS.items()}
        results = []
        for oracle in self._oracles:
            start = time.perf_counter()
            try:
                error = float(oracle.evaluate(knobs))
            except Exception as e:
                logger.error(f"oracle {oracle.name} raised: {e}")
                error = math.inf
            passed = math.isfinite(error) and error <= oracle.tolerance
            result = OracleResult(
                oracle.name,
                oracle.module,
                oracle.invariant,
                passed,
                error,
                oracle.tolerance,
                (time.perf_counter() - start) * 1000.0,
            )
            results.append(result)
            if not passed:
                logger.warning(f"oracle {oracle.name} failed: error {error:.3e} > {oracle.tolerance:.1e}")
                if stop_on_failure:
                    break
        return results


oracles = OracleRegistry()


def _quadratic(knobs: dict, dim: int = 2):
    return builtin_model("quadratic", {"gamma_E": knobs["quadratic.gamma_E"], "gamma_v": knobs["quadratic.gamma_v"]}, dim=dim)


@oracles.register("cofactor-identity", "minors", "F cof(F)^T = det(F) I", 1e-12)
def _cofactor_identity(knobs: dict) -> float:
    F = np.random.default_rng(0).normal(size=(1000, 3, 3))
    lhs = np.einsum("nia,nja->nij", F, minors.cofactor(F))
    rhs = minors.determinant(F)[:, None, None] * np.eye(3)
    scale = np.maximum(1.0, np.abs(F).max(axis=(1, 2)) ** 3)
    return float((np.abs(lhs - rhs).max(axis=(1, 2)) / scale).max())


@oracles.register("quadratic-G", "entropy", "G(tau) = |tau|^2/(2 gamma_v) - tau . Xi_0", 1e-12)
def _quadratic_G(knobs: dict) -> float:
    model = _quadratic(knobs)
    structure = entropy.build_G(model)
    taus = np.random.default_rng(1).uniform(-0.5, 0.5, size=(64, model.size))
    exact = np.sum(taus * taus, axis=-1) / (2.0 * KNOBS["quadratic.gamma_v"]) - taus @ model.reference
    return float(np.abs(structure.G_value(taus) - exact).max())


@oracles.register("psi-hessian-eigenvalue", "entropy", "lambda_min(hess Psi) = 3 - sqrt(2) for gamma_I = 4, gamma_v = 1/2", 1e-10)
def _psi_hessian_eigenvalue(knobs: dict) -> float:
    model = _quadratic(knobs)
    structure = entropy.build_G(model)
    xs = model.box.sample(16, seed=2)
    taus = entropy.equilibrium_tau(model, xs)
    return float(np.abs(entropy.hessian_psi_min_eig(structure, xs, taus) - (3.0 - math.sqrt(2.0))).max())


@oracles.register("delta-bound", "entropy", "optimal delta bound equals lambda_min for the quadratic model", 1e-12)
def _delta_bound(knobs: dict) -> float:
    model = _quadratic(knobs)
    return abs(entropy.delta_lower_bound(model.gamma_I, model.gamma_v) - (3.0 - math.sqrt(2.0)))


@oracles.register("chapman-enskog-quadratic", "diagnostics", "D_{i1}^{j1}(I) = gamma_v (delta_ij + delta_i1 delta_j1)", 1e-12)
def _chapman_enskog(knobs: dict) -> float:
    model = _quadratic(knobs)
    D = diagnostics.chapman_enskog_tensor(model, np.eye(2))
    exact = KNOBS["quadratic.gamma_v"] * np.array([[2.0, 0.0], [0.0, 1.0]])
    return float(np.abs(D[:, 0, :, 0] - exact).max())


def _gas(knobs: dict) -> gasdyn.GasModel:
    return gasdyn.builtin_gas("polytropic-linear", {"kappa": knobs["gas.kappa"], "gamma": 2.0, "a": knobs["gas.a"]})


@oracles.register("gas-G", "gasdyn", "G(tau) = -ln(tau) for P(rho) = rho", 1e-12)
def _gas_G(knobs: dict) -> float:
    tau = np.linspace(0.5, 2.0, 31)
    return float(np.abs(_gas(knobs).G(tau) + np.log(tau)).max())


@oracles.register("gas-entropy", "gasdyn", "H(rho=1, m=0, tau=P(1)) = 1", 1e-12)
def _gas_entropy(knobs: dict) -> float:
    gas = _gas(knobs)
    return abs(float(gasdyn.entropy_H(gas, 1.0, 0.0, gas.P.pressure(1.0))) - 1.0)


@oracles.register("gas-dissipation", "gasdyn", "rho (tau - P) (1/rho - 1/P^{-1}(tau)) = 1/2 at rho = 1, tau = 2", 1e-12)
def _gas_dissipation(knobs: dict) -> float:
    return abs(float(gasdyn.gas_dissipation(_gas(knobs), 1.0, 2.0)) - 0.5)


@oracles.register("gas-conditions", "gasdyn", "(a0), (a1), (a3) and convexity of H hold for the default family", 0.0)
def _gas_conditions(knobs: dict) -> float:
    report = gasdyn.check_a_conditions(_gas(knobs), n_samples=256, seed=0)
    return 0.0 if report.passed else 1.0


@dataclass
class SelftestReport:
    results: list[OracleResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def first_failure(self) -> OracleResult | None:
        return next((r for r in self.results if not r.passed), None)

    def to_dict(self) -> dict:
        failure = self.first_failure
        return {
            "passed": self.passed,
            "first_failure": f"{failure.module}: {failure.invariant} ({failure.name})" if failure else None,
            "oracles": [r.to_dict() for r in self.results],
        }


def run_selftest(perturb: dict[str, float] | None = None) -> SelftestReport:
    return SelftestReport(oracles.run(perturb))
