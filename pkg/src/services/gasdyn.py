"""
Isentropic gas dynamics with pressure relaxation in Eulerian coordinates:

    rho_t + (rho u)_x = 0
    (rho u)_t + (rho u^2 + p_I(rho) - tau)_x = 0
    (rho tau)_t + (rho u tau)_x = -(1/eps) rho (tau - P(rho)),   P = p_I - p_E

with the entropy H(rho, tau, m) = m^2/(2 rho) + rho (e_I(rho) + tau/rho + G(tau)),
G'(tau) = -1/P^{-1}(tau). Integration constants: e(1) = 0 and G(1) = 0.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from src.services import dynamics, eos
from src.services import finite_volume as fv
from src.services.constitutive import ConstitutiveModel, gas_lagrangean_parts
from src.services.dynamics import RelaxState, SolverOptions, Trajectory
from src.services.entropy import EntropyStructure, build_G, equilibrium_tau, psi
from src.services.errors import CFLViolation, FoldOverError, ModelParameterError, PolyrelaxError, VacuumError
from src.services.grid import SlabGrid, cell_total
from src.services.minors import determinant, phi

logger = logging.getLogger(__name__)

BOX_GRID = 257
INVERSE_BRACKET = (1e-8, 1e8)
MOMENTUM_RANGE = 1.0


@dataclass(frozen=True, eq=False)
class GasModel:
    family: str
    p_I: eos.PowerLawPressure
    p_E: eos.PowerLawPressure
    rho_box: tuple[float, float] = (0.5, 2.0)
    rho_min: float = 1e-3
    params: dict = field(default_factory=dict)

    @cached_property
    def P(self) -> eos.PowerLawPressure:
        return self.p_I - self.p_E

    def e_I(self, rho):
        return self.p_I.energy(rho)

    def e_E(self, rho):
        return self.p_E.energy(rho)

    def P_inv(self, tau):
        return self.P.inverse(tau, INVERSE_BRACKET)

    def G(self, tau):
        """G(tau) = -int_1^tau ds / P^{-1}(s) = -(Q(P^{-1}(tau)) - Q(P^{-1}(1))), Q'(r) = P'(r)/r."""
        tau = np.asarray(tau, dtype=float)
        if self.P.is_monomial:
            c, g = self.P.terms[0]
            if g == 1.0:
                return -c * np.log(tau)
            r = 1.0 / g
            return -(c**r) * (tau ** (1.0 - r) - 1.0) / (1.0 - r)

        def Q(rho):
            return sum(c * np.log(rho) if g == 1.0 else c * g * rho ** (g - 1.0) / (g - 1.0) for c, g in self.P.terms)

        return -(Q(self.P_inv(tau)) - Q(self.P_inv(1.0)))

    def dG(self, tau):
        return -1.0 / self.P_inv(tau)

    def d2G(self, tau):
        rho_bar = self.P_inv(tau)
        return 1.0 / (rho_bar**2 * self.P.derivative(rho_bar))

    @cached_property
    def rho_grid(self) -> np.ndarray:
        return np.linspace(self.rho_box[0], self.rho_box[1], BOX_GRID)

    def tau_box(self) -> tuple[float, float]:
        values = self.P.pressure(np.asarray(self.rho_box))
        return float(values.min()), float(values.max())

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": self.params,
            "p_I": self.p_I.describe(),
            "p_E": self.p_E.describe(),
            "P": self.P.describe(),
            "rho_box": list(self.rho_box),
            "rho_min": self.rho_min,
            "integration_constants": {"e_I(1)": 0.0, "e_E(1)": 0.0, "G(1)": 0.0},
        }


def builtin_gas(name: str, params: dict | None = None, rho_box=(0.5, 2.0), rho_min: float = 1e-3) -> GasModel:
    """Named gas family; rejects parameters violating (a0) or (a1) on rho_box."""
    p_I, p_E = eos.gas_laws(name, params)
    gas = GasModel(name, p_I, p_E, tuple(float(r) for r in rho_box), rho_min, dict(params or {}))
    rho = gas.rho_grid
    for label, values in (
        ("p_I", p_I.pressure(rho)),
        ("p_E", p_E.pressure(rho)),
        ("p_I'", p_I.derivative(rho)),
        ("p_E'", p_E.derivative(rho)),
        ("(p_I - p_E)'", gas.P.derivative(rho)),
    ):
        if np.any(values <= 0):
            raise ModelParameterError(f"{name}: {label} is not positive on rho in {list(gas.rho_box)}")
    return gas


def gas_from_config(config) -> GasModel:
    return builtin_gas(config.gas.family, dict(config.gas.params), config.gas.rho_box, config.numerics.rho_min)


def _samples(gas: GasModel, n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rho, rho_bar, m) Latin-hypercube samples; tau = P(rho_bar) covers the image of the box."""
    unit = qmc.LatinHypercube(d=3, seed=np.random.default_rng(seed)).random(n)
    lo, hi = gas.rho_box
    rho = lo + unit[:, 0] * (hi - lo)
    rho_bar = lo + unit[:, 1] * (hi - lo)
    m = MOMENTUM_RANGE * (2.0 * unit[:, 2] - 1.0)
    return rho, rho_bar, m


def entropy_H(gas: GasModel, rho, m, tau):
    rho, m, tau = (np.asarray(a, dtype=float) for a in (rho, m, tau))
    return 0.5 * m * m / rho + rho * (gas.e_I(rho) + tau / rho + gas.G(tau))


def _rho_e_I_second(gas: GasModel, rho):
    """(rho e_I)'' = p_I'(rho)/rho."""
    return gas.p_I.derivative(rho) / rho


def entropy_H_hessian(gas: GasModel, rho, m, tau) -> np.ndarray:
    """Hessian of H in the variables (rho, tau, m), shape (..., 3, 3)."""
    rho, m, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rho, m, tau)))
    H = np.zeros(rho.shape + (3, 3))
    dG = gas.dG(tau)
    H[..., 0, 0] = _rho_e_I_second(gas, rho) + m * m / rho**3
    H[..., 0, 1] = H[..., 1, 0] = dG
    H[..., 0, 2] = H[..., 2, 0] = -m / rho**2
    H[..., 1, 1] = rho * gas.d2G(tau)
    H[..., 2, 2] = 1.0 / rho
    return H


def conservative_hessian(gas: GasModel, rho, m, tau) -> np.ndarray:
    """Hessian of H in the conserved variables (rho, m, q = rho tau)."""
    rho, m, tau = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rho, m, tau)))
    G2 = gas.d2G(tau)
    H = np.zeros(rho.shape + (3, 3))
    H[..., 0, 0] = _rho_e_I_second(gas, rho) + 2.0 * tau / rho**2 + tau * tau * G2 / rho + m * m / rho**3
    H[..., 0, 1] = H[..., 1, 0] = -m / rho**2
    H[..., 0, 2] = H[..., 2, 0] = -1.0 / rho**2 - tau * G2 / rho
    H[..., 1, 1] = 1.0 / rho
    H[..., 2, 2] = G2 / rho
    return H


def gas_dissipation(gas: GasModel, rho, tau):
    """rho (tau - P(rho)) (1/rho - 1/P^{-1}(tau))."""
    rho, tau = np.asarray(rho, dtype=float), np.asarray(tau, dtype=float)
    return rho * (tau - gas.P.pressure(rho)) * (1.0 / rho - 1.0 / gas.P_inv(tau))


DECIDING_CONDITIONS = ("a0", "a1", "a3", "H-convexity")
A2_ADVISORY = (
    "(a2) is reported only: it is equivalent to convexity of H in the conserved variables "
    "(rho, m, rho*tau), while `passed` requires convexity of H in (rho, tau, m)"
)


@dataclass
class GasConditionReport:
    passed: bool
    a0_margin: float
    a1_margin: float
    a2_margin: float
    a3_margin: float
    hessian_min_eig: float
    conservative_min_eig: float
    conservative_convex: bool
    dissipation_min: float
    dG_error: float
    d2G_error: float
    n_samples: int
    seed: int
    rho_box: list[float]
    notes: list[str] = field(default_factory=list)

    @property
    def violated(self) -> list[str]:
        names = []
        for name, margin in (("a0", self.a0_margin), ("a1", self.a1_margin), ("a3", self.a3_margin)):
            if not margin > 0:
                names.append(name)
        if not self.hessian_min_eig > 0:
            names.append("H-convexity")
        return names

    def to_dict(self) -> dict:
        return {
            **self.__dict__,
            "violated": self.violated,
            "decided_by": list(DECIDING_CONDITIONS),
            "advisory": {"a2": A2_ADVISORY, "a2_holds": bool(self.a2_margin > 0)},
        }


def check_a_conditions(gas: GasModel, n_samples: int = 512, seed: int = 0) -> GasConditionReport:
    """
    Sampled margins of (a0)-(a3) on rho_box, pairs (rho, rho_bar) for (a2)/(a3),
    plus Hessian positivity of H. (a2), equivalent to convexity of H in the
    conserved variables, is reported but does not decide `passed`.
    """
    rho, rho_bar, m = _samples(gas, n_samples, seed)
    dense = np.concatenate([rho, gas.rho_grid])
    p_I, p_E, P = gas.p_I, gas.p_E, gas.P

    a0 = float(min(p_I.pressure(dense).min(), p_E.pressure(dense).min(), p_I.derivative(dense).min(), p_E.derivative(dense).min()))
    a1 = float(P.derivative(dense).min())
    a2 = float((p_I.derivative(dense) * dense**2).min() - (P.derivative(dense) * dense**2).max())
    a3 = float(min(p_I.derivative(dense).min() - P.derivative(dense).max(), a1))

    tau = P.pressure(rho_bar)
    hessian = float(np.linalg.eigvalsh(entropy_H_hessian(gas, rho, m, tau))[..., 0].min())
    conservative = float(np.linalg.eigvalsh(conservative_hessian(gas, rho, m, tau))[..., 0].min())
    dissipation_min = float(gas_dissipation(gas, rho, tau).min())

    h = 1e-6 * np.maximum(1.0, tau)
    fd_dG = (gas.G(tau + h) - gas.G(tau - h)) / (2 * h)
    fd_d2G = (gas.dG(tau + h) - gas.dG(tau - h)) / (2 * h)
    dG_error = float(np.abs(fd_dG - gas.dG(tau)).max())
    d2G_error = float(np.abs(fd_d2G - gas.d2G(tau)).max())

    notes = []
    if a2 <= 0:
        notes.append("(a2) fails on the box: H is not convex in (rho, m, rho*tau) and Psi(w, tau) is not jointly convex")
    passed = a0 > 0 and a1 > 0 and a3 > 0 and hessian > 0
    return GasConditionReport(
        passed=bool(passed),
        a0_margin=a0,
        a1_margin=a1,
        a2_margin=a2,
        a3_margin=a3,
        hessian_min_eig=hessian,
        conservative_min_eig=conservative,
        conservative_convex=bool(conservative > 0),
        dissipation_min=dissipation_min,
        dG_error=dG_error,
        d2G_error=d2G_error,
        n_samples=n_samples,
        seed=seed,
        rho_box=list(gas.rho_box),
        notes=notes,
    )


def lagrangean_model(gas: GasModel, dim: int = 2) -> ConstitutiveModel:
    """sigma_I(w) = e_I(1/w), sigma_E(w) = e_E(1/w) on w in 1/rho_box."""
    w_range = (1.0 / gas.rho_box[1], 1.0 / gas.rho_box[0])
    sigma_I, sigma_E, declared, box, reference, active = gas_lagrangean_parts(dim, gas.p_I, gas.p_E, w_range)
    return ConstitutiveModel(
        name=f"gas-lagrangean[{gas.family}]",
        dim=dim,
        sigma_I=sigma_I,
        sigma_E=sigma_E,
        box=box,
        reference=reference,
        active=active,
        params={"gas_family": gas.family, **gas.params},
        **declared,
    )


def lagrangean_entropy_spread(gas: GasModel, structure: EntropyStructure, n_samples: int = 64, seed: int = 0) -> float:
    """
    max - min over samples of Psi(w, tau_w) - (e_I(1/w) + w tau_w + G(tau_w)); zero up to
    round-off when the Legendre construction reproduces the gas entropy.
    """
    model = structure.model
    rho, rho_bar, _ = _samples(gas, n_samples, seed)
    w, tau_w = 1.0 / rho, gas.P.pressure(rho_bar)
    xi = model.embed(w[:, None], base=model.reference)
    tau = model.embed(tau_w[:, None], base=np.zeros(model.size))
    difference = psi(structure, xi, tau) - (gas.e_I(rho) + w * tau_w + gas.G(tau_w))
    return float(difference.max() - difference.min())


# Eulerian solver


@dataclass(frozen=True, kw_only=True, eq=False)
class EulerState:
    grid: SlabGrid
    rho: np.ndarray
    m: np.ndarray
    tau: np.ndarray
    t: float = 0.0
    dissipated: float = 0.0

    @property
    def u(self) -> np.ndarray:
        return self.m / self.rho


def euler_speeds(gas: GasModel, rho, m, pressure: eos.PowerLawPressure | None = None) -> np.ndarray:
    law = pressure or gas.p_I
    return np.abs(m / rho) + np.sqrt(np.maximum(law.derivative(rho), 0.0))


def euler_stable_dt(gas: GasModel, state: EulerState, cfl: float, equilibrium: bool = False) -> float:
    speed = float(euler_speeds(gas, state.rho, state.m, gas.p_E if equilibrium else None).max())
    if not math.isfinite(speed):
        raise VacuumError(f"non-finite wave speed at t = {state.t:.6g}")
    return cfl * state.grid.dx / speed if speed > 0 else math.inf


def _check_vacuum(gas: GasModel, state: EulerState):
    bad = np.flatnonzero(~(state.rho >= gas.rho_min))
    if bad.size:
        cell = int(bad[0])
        raise VacuumError(f"rho = {state.rho[cell]:.4g} < rho_min = {gas.rho_min} at cell {cell}, t = {state.t:.6g}")


def _euler_cfl(gas: GasModel, state: EulerState, dt: float, options: SolverOptions, equilibrium: bool):
    bound = euler_stable_dt(gas, state, options.cfl, equilibrium)
    if dt > bound * (1.0 + dynamics.CFL_SLACK):
        raise CFLViolation(f"dt = {dt:.4e} exceeds the CFL bound {bound:.4e} at t = {state.t:.6g}")


def _euler_source(gas: GasModel, state: EulerState, dt: float, eps: float, options: SolverOptions) -> EulerState:
    P = gas.P.pressure(state.rho)
    tau = P + (state.tau - P) * math.exp(-dt / eps)
    drop = state.rho * (gas.G(state.tau) - gas.G(tau)) + (state.tau - tau)
    dissipated = state.dissipated + cell_total(drop, state.grid.dx, options.deterministic)
    return replace(state, tau=tau, dissipated=dissipated)


def step_euler_relax(state: EulerState, gas: GasModel, dt: float, eps: float, options: SolverOptions | None = None) -> EulerState:
    """Strang step: exact tau relaxation with rho frozen, LLF/SSP-RK2 for (rho, m, rho tau), relaxation."""
    options = options or SolverOptions()
    _euler_cfl(gas, state, dt, options, equilibrium=False)
    state = _euler_source(gas, state, 0.5 * dt, eps, options)

    def flux(W, _aux):
        rho, m, q = W[:, 0], W[:, 1], W[:, 2]
        return np.stack([m, m * m / rho + gas.p_I.pressure(rho) - q / rho, m * q / rho], axis=-1)

    def rhs(W):
        speeds = euler_speeds(gas, W[:, 0], W[:, 1])
        return fv.llf_divergence(W, aux, flux, speeds, state.grid.dx, options.reconstruction)

    aux = np.zeros((state.grid.n_cells, 1))
    U = fv.ssp_rk2(np.stack([state.rho, state.m, state.rho * state.tau], axis=-1), rhs, dt)
    state = replace(state, rho=U[:, 0], m=U[:, 1], tau=U[:, 2] / U[:, 0], t=state.t + dt)
    _check_vacuum(gas, state)
    return _euler_source(gas, state, 0.5 * dt, eps, options)


def step_euler_equilibrium(state: EulerState, gas: GasModel, dt: float, options: SolverOptions | None = None) -> EulerState:
    """Isentropic Euler with p_E; tau is kept at P(rho)."""
    options = options or SolverOptions()
    _euler_cfl(gas, state, dt, options, equilibrium=True)

    def flux(W, _aux):
        rho, m = W[:, 0], W[:, 1]
        return np.stack([m, m * m / rho + gas.p_E.pressure(rho)], axis=-1)

    def rhs(W):
        speeds = euler_speeds(gas, W[:, 0], W[:, 1], gas.p_E)
        return fv.llf_divergence(W, aux, flux, speeds, state.grid.dx, options.reconstruction)

    aux = np.zeros((state.grid.n_cells, 1))
    U = fv.ssp_rk2(np.stack([state.rho, state.m], axis=-1), rhs, dt)
    state = replace(state, rho=U[:, 0], m=U[:, 1], tau=gas.P.pressure(U[:, 0]), t=state.t + dt)
    _check_vacuum(gas, state)
    return state


def euler_initial_state(gas: GasModel, grid: SlabGrid, amplitude: float, wavenumber: int = 1, prepared: bool = True, tau_offset: float = 0.0) -> EulerState:
    """Density pulse rho = 1 + A sin(2 pi k x / L) at rest, tau = P(rho) (+ offset)."""
    phase = 2.0 * np.pi * wavenumber * (grid.centers - grid.x_min) / grid.length
    rho = 1.0 + amplitude * np.sin(phase)
    tau = gas.P.pressure(rho) + (0.0 if prepared else tau_offset)
    state = EulerState(grid=grid, rho=rho, m=np.zeros_like(rho), tau=tau)
    _check_vacuum(gas, state)
    return state


def euler_record(gas: GasModel, state: EulerState, options: SolverOptions, n_steps: int) -> dict:
    dx, det = state.grid.dx, options.deterministic
    H = cell_total(entropy_H(gas, state.rho, state.m, state.tau), dx, det)
    return {
        "t": state.t,
        "step": n_steps,
        "total_H": H,
        "cumulative_dissipation": state.dissipated,
        "H_plus_dissipation": H + state.dissipated,
        "total_rho": cell_total(state.rho, dx, det),
        "total_m": cell_total(state.m, dx, det),
        "min_rho": float(state.rho.min()),
        "relaxation_residual": float(np.abs(state.tau - gas.P.pressure(state.rho)).max()),
    }


def run_euler(config, gas: GasModel, eps: float | None = None, equilibrium: bool = False, grid: SlabGrid | None = None):
    """Eulerian run to time.t_end; returns (snapshots, records, n_steps)."""
    options = SolverOptions.from_config(config)
    eps = config.relax.epsilon if eps is None else eps
    grid = grid or SlabGrid.from_config(config.grid)
    state = euler_initial_state(gas, grid, config.gas.amplitude, config.init.wavenumber, config.init.prepared, config.init.tau_offset)

    if equilibrium:
        def step(s, dt):
            return step_euler_equilibrium(s, gas, dt, options)
    else:
        def step(s, dt):
            return step_euler_relax(s, gas, dt, eps, options)

    def dt_fn(s):
        return euler_stable_dt(gas, s, options.cfl, equilibrium)

    times = dynamics.snapshot_schedule(config.time.t_end, dt_fn(state), config.time.snapshot_stride)
    snapshots, records, n_steps = [state], [euler_record(gas, state, options, 0)], 0
    try:
        for t_next in times[1:]:
            state, n = dynamics.advance(state, t_next, step, dt_fn)
            n_steps += n
            snapshots.append(state)
            records.append(euler_record(gas, state, options, n_steps))
    except PolyrelaxError as e:
        e.partial = (snapshots, records)
        raise
    return snapshots, records, n_steps


def euler_snapshot_rows(gas: GasModel, state: EulerState) -> list[dict]:
    H = entropy_H(gas, state.rho, state.m, state.tau)
    return [
        {"x": x, "rho": r, "u": u, "tau": t, "H": h}
        for x, r, u, t, h in zip(state.grid.centers.tolist(), state.rho.tolist(), state.u.tolist(), state.tau.tolist(), H.tolist())
    ]


@dataclass
class EulerEpsilonStudy:
    eps: list[float]
    gap_rho_L1: list[float]
    gap_m_L1: list[float]
    status: list[str]

    @property
    def monotone(self) -> bool:
        gaps = [g for g, s in zip(self.gap_rho_L1, self.status) if s == "ok"]
        return all(b <= a for a, b in zip(gaps, gaps[1:]))

    def rows(self) -> list[dict]:
        return [
            {"eps": e, "gap_rho_L1": g, "gap_m_L1": gm, "status": s}
            for e, g, gm, s in zip(self.eps, self.gap_rho_L1, self.gap_m_L1, self.status)
        ]


def euler_epsilon_study(config, gas: GasModel, eps_list: list[float]) -> EulerEpsilonStudy:
    """L1 gaps at t_end between relaxation runs and the p_E Euler run on the same grid."""
    reference, _, _ = run_euler(config, gas, equilibrium=True)
    ref = reference[-1]
    det = config.numerics.deterministic_reduction
    study = EulerEpsilonStudy([], [], [], [])
    for eps in eps_list:
        study.eps.append(eps)
        try:
            snapshots, _, _ = run_euler(config, gas, eps=eps)
        except PolyrelaxError as e:
            logger.warning(f"Euler run at eps={eps} aborted: {e}", extra={"epsilon": eps})
            study.gap_rho_L1.append(math.nan)
            study.gap_m_L1.append(math.nan)
            study.status.append(f"aborted: {e}")
            continue
        final = snapshots[-1]
        study.gap_rho_L1.append(cell_total(np.abs(final.rho - ref.rho), ref.grid.dx, det))
        study.gap_m_L1.append(cell_total(np.abs(final.m - ref.m), ref.grid.dx, det))
        study.status.append("ok")
    return study


# Lagrangean / Eulerian cross-check


@dataclass
class CrossCheckReport:
    n_cells: list[int]
    gap_L1: list[float]
    abel_residual: list[float]
    t_end: float
    epsilon: float

    @property
    def order(self) -> float | None:
        if len(self.gap_L1) < 2 or not all(g > 0 for g in self.gap_L1[-2:]):
            return None
        return math.log2(self.gap_L1[-2] / self.gap_L1[-1])

    def to_dict(self) -> dict:
        return {**self.__dict__, "order": self.order}


def _lagrangean_profile(grid: SlabGrid, amplitude: float, wavenumber: int):
    k = 2.0 * np.pi * wavenumber / grid.length

    def F11(X):
        return 1.0 + amplitude * np.sin(k * (X - grid.x_min))

    def y(X):
        # y(X) = X + int_{x_min}^X (F11 - 1)
        return X + amplitude / k * (1.0 - np.cos(k * (np.asarray(X) - grid.x_min)))

    return F11, y


def _crosscheck_level(config, gas: GasModel, grid: SlabGrid, eps: float):
    options = SolverOptions.from_config(config)
    dim = config.gas.crosscheck_dim
    model = lagrangean_model(gas, dim)
    F11, y_of = _lagrangean_profile(grid, config.gas.amplitude, config.init.wavenumber)

    # Lagrangean run: diagonal data, F = diag(F11, 1, ...)
    X = grid.centers
    f1 = np.zeros((grid.n_cells, dim))
    f1[:, 0] = F11(X)
    background = np.eye(dim)
    F = dynamics.assemble_F(f1, background)
    lag = RelaxState(
        grid=grid,
        v=np.zeros((grid.n_cells, dim)),
        f1=f1,
        background=background,
        tau=equilibrium_tau(model, phi(F).flat),
    )
    positions = y_of(X).astype(float)

    def lag_step(s, dt):
        new = dynamics.step_relax(s, model, None, dt, eps, options)
        positions[:] += 0.5 * dt * (s.v[:, 0] + new.v[:, 0])
        return new

    def lag_dt(s):
        return dynamics.stable_dt(model, s, options.cfl)

    times = dynamics.snapshot_schedule(config.time.t_end, lag_dt(lag), config.time.snapshot_stride)
    if len(times) < 3:
        times = [0.0, 0.5 * config.time.t_end, config.time.t_end] if config.time.t_end > 0 else times
    trajectory = Trajectory(grid)
    trajectory.append(lag)
    for t_next in times[1:]:
        lag, _ = dynamics.advance(lag, t_next, lag_step, lag_dt)
        trajectory.append(lag)
    abel = dynamics.abel_residual(trajectory) if len(trajectory) >= 3 else 0.0

    # Eulerian run from the pushed-forward data
    L = grid.length
    x_e = grid.centers

    def material_point(x):
        # y is increasing with y(X + L) = y(X) + L
        lo = x - L
        hi = x + L
        return brentq(lambda Xv: float(y_of(Xv)) - x, lo, hi, xtol=1e-14)

    X_of_x = np.array([material_point(x) for x in x_e])
    rho0 = 1.0 / F11(X_of_x)
    euler = EulerState(grid=grid, rho=rho0, m=np.zeros_like(rho0), tau=gas.P.pressure(rho0))

    def eul_step(s, dt):
        return step_euler_relax(s, gas, dt, eps, options)

    def eul_dt(s):
        return euler_stable_dt(gas, s, options.cfl)

    euler, _ = dynamics.advance(euler, config.time.t_end, eul_step, eul_dt)

    # Lagrangean density at the current positions, sampled at Eulerian centers
    wrapped = np.append(positions, positions[0] + L)
    if np.any(np.diff(wrapped) <= 0):
        raise FoldOverError(f"material map is not monotone at t = {lag.t:.6g}")
    rho_lag = 1.0 / determinant(lag.F)
    rho_on_eulerian = np.interp(x_e, positions, rho_lag, period=L)
    gap = cell_total(np.abs(euler.rho - rho_on_eulerian), grid.dx, options.deterministic)
    return gap, abel


def lagrangean_cross_check(gas: GasModel, config, levels: int = 2) -> CrossCheckReport:
    """
    Gas-lagrangean slab run against the Eulerian pressure-relaxation run from the
    same smooth data, at n_cells, 2 n_cells, ...; L1 density gap per level.
    """
    eps = config.relax.epsilon
    base = SlabGrid.from_config(config.grid)
    report = CrossCheckReport([], [], [], config.time.t_end, eps)
    for level in range(levels):
        grid = base.refined(2**level)
        gap, abel = _crosscheck_level(config, gas, grid, eps)
        report.n_cells.append(grid.n_cells)
        report.gap_L1.append(gap)
        report.abel_residual.append(abel)
        logger.info(f"cross-check on {grid.n_cells} cells: L1 gap {gap:.3e}, Abel residual {abel:.3e}", extra={"n_cells": grid.n_cells})
    return report


def default_structure(gas: GasModel, dim: int = 2) -> EntropyStructure:
    return build_G(lagrangean_model(gas, dim))
