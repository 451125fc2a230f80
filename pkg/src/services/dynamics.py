"""
Finite-volume solvers for polyconvex elastodynamics and its stress-relaxation
approximation in slab (plane-wave) geometry.

Fields depend on x_1 only. The curl-free constraint on the rows of F then forces
columns 2..d of F to be constant in space, so states keep column 1 per cell
(`f1`) and one shared `background` matrix whose first column is unused.

Relaxation systems are advanced by Strang splitting: an exact exponential
half-step of the tau ODE with F frozen, an SSP-RK2 / local Lax-Friedrichs step
of the conservative variables, and a second source half-step. The exact source
step is the memory-integral form of the viscoelastic stress over one sub-step
with F held constant.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from src.services import finite_volume as fv
from src.services.constitutive import ConstitutiveModel, model_from_config
from src.services.entropy import EntropyStructure, build_G, dissipation, equilibrium_tau, psi
from src.services.errors import (
    CFLViolation,
    ConfigError,
    DeterminantFloorError,
    InsufficientSnapshots,
    NonFiniteInputError,
    PolyrelaxError,
)
from src.services.grid import SlabGrid, cell_total, centered_difference, spectral_derivative
from src.services.minors import cofactor, column_jacobian, determinant, phi

logger = logging.getLogger(__name__)

FD_REL_STEP = 1e-6
CFL_SLACK = 1e-9
MAX_STEPS = 10_000_000
SYSTEMS = ("relax", "equilibrium", "augmented", "augmented-equilibrium")


@dataclass(frozen=True)
class SolverOptions:
    cfl: float = 0.4
    reconstruction: str = "first-order"
    w_min: float = 0.1
    deterministic: bool = True

    @classmethod
    def from_config(cls, config) -> "SolverOptions":
        return cls(
            cfl=config.time.cfl,
            reconstruction=config.numerics.reconstruction,
            w_min=config.numerics.w_min,
            deterministic=config.numerics.deterministic_reduction,
        )


@dataclass(frozen=True, kw_only=True, eq=False)
class SlabState:
    grid: SlabGrid
    v: np.ndarray  # (N, d)
    f1: np.ndarray  # (N, d), column 1 of F
    background: np.ndarray  # (d, d), columns 2..d of F shared by every cell
    t: float = 0.0

    @property
    def dim(self) -> int:
        return self.v.shape[-1]

    @property
    def F(self) -> np.ndarray:
        return assemble_F(self.f1, self.background)

    @property
    def minors(self) -> np.ndarray:
        return phi(self.F).flat


@dataclass(frozen=True, kw_only=True, eq=False)
class EquilState(SlabState):
    pass


@dataclass(frozen=True, kw_only=True, eq=False)
class RelaxState(SlabState):
    tau: np.ndarray  # (N, D)
    dissipated: float = 0.0  # time integral of (1/eps) * total dissipation over the source sub-steps


@dataclass(frozen=True, kw_only=True, eq=False)
class AugmentedState(RelaxState):
    xi: np.ndarray  # (N, D), evolved independently of phi(F)


def assemble_F(f1: np.ndarray, background: np.ndarray) -> np.ndarray:
    F = np.array(np.broadcast_to(background, f1.shape[:-1] + background.shape), dtype=float)
    F[..., :, 0] = f1
    return F


def _stress(T: np.ndarray, F: np.ndarray) -> np.ndarray:
    return np.einsum("...A,...Ai->...i", T, column_jacobian(F))


def instantaneous_stress(model: ConstitutiveModel, F, tau) -> np.ndarray:
    """S_{i1} = (d sigma_I/d Xi^A (Phi(F)) + tau^A) dPhi^A/dF_{i1}."""
    F = np.asarray(F, dtype=float)
    return _stress(model.sigma_I.gradient(phi(F).flat) + tau, F)


def equilibrium_stress(model: ConstitutiveModel, F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    return _stress(model.sigma_E.gradient(phi(F).flat), F)


def acoustic_tensor(stress_of_f1: Callable[[np.ndarray], np.ndarray], f1: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Symmetrized dS_{i1}/dF_{j1} by central differences, shape (N, d, d)."""
    d = f1.shape[-1]
    scale = np.sqrt(np.sum(f1 * f1, axis=-1) + np.sum(background[:, 1:] ** 2))
    h = FD_REL_STEP * np.maximum(1.0, scale)
    A = np.empty(f1.shape[:-1] + (d, d))
    for j in range(d):
        step = np.zeros_like(f1)
        step[..., j] = h
        A[..., :, j] = (stress_of_f1(f1 + step) - stress_of_f1(f1 - step)) / (2.0 * h[..., None])
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _stress_of_f1(model: ConstitutiveModel, state: SlabState, equilibrium: bool):
    if equilibrium or not isinstance(state, RelaxState):
        return lambda f1: equilibrium_stress(model, assemble_F(f1, state.background))
    # the augmented system propagates at the reduced speeds with Xi = Phi(F)
    return lambda f1: instantaneous_stress(model, assemble_F(f1, state.background), state.tau)


def cell_wave_speeds(model: ConstitutiveModel, state: SlabState, equilibrium: bool = False, f1=None) -> np.ndarray:
    f1 = state.f1 if f1 is None else f1
    A = acoustic_tensor(_stress_of_f1(model, state, equilibrium), f1, state.background)
    lam = np.linalg.eigvalsh(A)[..., -1]
    if not np.all(np.isfinite(lam)):
        raise NonFiniteInputError(f"non-finite acoustic tensor at t = {state.t:.6g}")
    return np.sqrt(np.maximum(lam, 0.0))


def max_wave_speed(model: ConstitutiveModel, state: SlabState, equilibrium: bool | None = None) -> float:
    """Bound on the characteristic speeds: max over cells of sqrt(lambda_max(dS_{i1}/dF_{j1}))."""
    if equilibrium is None:
        equilibrium = isinstance(state, EquilState)
    return float(cell_wave_speeds(model, state, equilibrium).max())


def stable_dt(model: ConstitutiveModel, state: SlabState, cfl: float, equilibrium: bool | None = None) -> float:
    speed = max_wave_speed(model, state, equilibrium)
    return cfl * state.grid.dx / speed if speed > 0 else math.inf


def _check_cfl(model: ConstitutiveModel, state: SlabState, dt: float, options: SolverOptions, equilibrium: bool):
    speed = max_wave_speed(model, state, equilibrium)
    if dt * speed > options.cfl * state.grid.dx * (1.0 + CFL_SLACK):
        raise CFLViolation(
            f"dt = {dt:.4e} exceeds the CFL bound {options.cfl * state.grid.dx / speed:.4e} "
            f"(cfl {options.cfl}, max speed {speed:.4e}) at t = {state.t:.6g}"
        )


def check_determinant(state: SlabState, w_min: float):
    det = determinant(state.F)
    bad = np.flatnonzero(~(det > w_min))
    if bad.size:
        cell = int(bad[0])
        raise DeterminantFloorError(
            f"det F = {det[cell]:.4g} <= w_min = {w_min} at cell {cell}, t = {state.t:.6g}",
            cell=cell,
            value=float(det[cell]),
            t=state.t,
        )


def relax_source(model: ConstitutiveModel, xi: np.ndarray, tau: np.ndarray, dt: float, eps: float) -> np.ndarray:
    """Exact solution of tau' = -(tau - tau_eq(xi))/eps over dt with xi frozen."""
    tau_eq = equilibrium_tau(model, xi)
    return tau_eq + (tau - tau_eq) * math.exp(-dt / eps)


def _source_half_step(model, structure, state: RelaxState, xi: np.ndarray, dt: float, eps: float, options: SolverOptions):
    tau = relax_source(model, xi, state.tau, 0.5 * dt, eps)
    dissipated = state.dissipated
    if structure is not None:
        # Psi drop along the exact tau flow equals the time integral of D/eps
        drop = psi(structure, xi, state.tau) - psi(structure, xi, tau)
        dissipated += cell_total(drop, state.grid.dx, options.deterministic)
    return replace(state, tau=tau, dissipated=dissipated)


def _hyperbolic(U, aux, flux_fn, speed_fn, grid: SlabGrid, options: SolverOptions, dt: float) -> np.ndarray:
    def rhs(W):
        return fv.llf_divergence(W, aux, flux_fn, speed_fn(W), grid.dx, options.reconstruction)

    return fv.ssp_rk2(U, rhs, dt)


def step_relax(
    state: RelaxState,
    model: ConstitutiveModel,
    structure: EntropyStructure | None,
    dt: float,
    eps: float,
    options: SolverOptions | None = None,
) -> RelaxState:
    """
    One Strang step of the reduced relaxation system.

    v and F column 1 are updated conservatively; tau only by the source. When an
    entropy structure is given, the entropy released by the source is added to
    `dissipated`.
    """
    options = options or SolverOptions()
    _check_cfl(model, state, dt, options, equilibrium=False)
    d = state.dim
    bg = state.background

    state = _source_half_step(model, structure, state, state.minors, dt, eps, options)

    def flux(W, tau):
        S = instantaneous_stress(model, assemble_F(W[:, d:], bg), tau)
        return np.concatenate([-S, -W[:, :d]], axis=-1)

    def speeds(W):
        return cell_wave_speeds(model, state, f1=W[:, d:])

    U = _hyperbolic(np.concatenate([state.v, state.f1], axis=-1), state.tau, flux, speeds, state.grid, options, dt)
    state = replace(state, v=U[:, :d], f1=U[:, d:], t=state.t + dt)
    check_determinant(state, options.w_min)

    return _source_half_step(model, structure, state, state.minors, dt, eps, options)


def step_equilibrium(state: EquilState, model: ConstitutiveModel, dt: float, options: SolverOptions | None = None) -> EquilState:
    options = options or SolverOptions()
    _check_cfl(model, state, dt, options, equilibrium=True)
    d = state.dim
    bg = state.background

    def flux(W, _aux):
        S = equilibrium_stress(model, assemble_F(W[:, d:], bg))
        return np.concatenate([-S, -W[:, :d]], axis=-1)

    def speeds(W):
        return cell_wave_speeds(model, state, equilibrium=True, f1=W[:, d:])

    aux = np.zeros((state.grid.n_cells, 1))
    U = _hyperbolic(np.concatenate([state.v, state.f1], axis=-1), aux, flux, speeds, state.grid, options, dt)
    state = replace(state, v=U[:, :d], f1=U[:, d:], t=state.t + dt)
    check_determinant(state, options.w_min)
    return state


def _augmented_hyperbolic(state: AugmentedState, model, dt, options, stress_potential, equilibrium: bool) -> AugmentedState:
    d = state.dim
    bg = state.background

    def flux(W, tau):
        v, f1, xi = W[:, :d], W[:, d : 2 * d], W[:, 2 * d :]
        J = column_jacobian(assemble_F(f1, bg))
        T = stress_potential(xi, tau)
        S = np.einsum("nA,nAi->ni", T, J)
        return np.concatenate([-S, -v, -np.einsum("nAi,ni->nA", J, v)], axis=-1)

    def speeds(W):
        return cell_wave_speeds(model, state, equilibrium=equilibrium, f1=W[:, d : 2 * d])

    U0 = np.concatenate([state.v, state.f1, state.xi], axis=-1)
    U = _hyperbolic(U0, state.tau, flux, speeds, state.grid, options, dt)
    state = replace(state, v=U[:, :d], f1=U[:, d : 2 * d], xi=U[:, 2 * d :], t=state.t + dt)
    check_determinant(state, options.w_min)
    return state


def step_augmented(
    state: AugmentedState,
    model: ConstitutiveModel,
    structure: EntropyStructure | None,
    dt: float,
    eps: float,
    options: SolverOptions | None = None,
) -> AugmentedState:
    """Strang step of the augmented system; Xi has its own flux -dPhi^A/dF_{i1}(F) v_i."""
    options = options or SolverOptions()
    _check_cfl(model, state, dt, options, equilibrium=False)
    state = _source_half_step(model, structure, state, state.xi, dt, eps, options)
    state = _augmented_hyperbolic(
        state, model, dt, options, lambda xi, tau: model.sigma_I.gradient(xi) + tau, equilibrium=False
    )
    return _source_half_step(model, structure, state, state.xi, dt, eps, options)


def step_equilibrium_augmented(
    state: AugmentedState, model: ConstitutiveModel, dt: float, options: SolverOptions | None = None
) -> AugmentedState:
    """Extended elastodynamics in (v, F, Xi) with stress grad sigma_E(Xi) dPhi(F); tau follows the equilibrium manifold of Xi."""
    options = options or SolverOptions()
    _check_cfl(model, state, dt, options, equilibrium=True)
    state = _augmented_hyperbolic(state, model, dt, options, lambda xi, _tau: model.sigma_E.gradient(xi), equilibrium=True)
    return replace(state, tau=equilibrium_tau(model, state.xi))


def advance(state: SlabState, t_target: float, step: Callable, dt_fn: Callable, max_steps: int = MAX_STEPS):
    """Step until t_target, the last step shortened to land on it exactly. Returns (state, n_steps)."""
    n_steps = 0
    while state.t < t_target:
        if n_steps >= max_steps:
            raise PolyrelaxError(f"more than {max_steps} steps needed to reach t = {t_target}")
        remaining = t_target - state.t
        dt = min(dt_fn(state), remaining)
        state = step(state, dt)
        n_steps += 1
        if dt >= remaining or t_target - state.t <= 1e-14 * max(1.0, abs(t_target)):
            state = replace(state, t=t_target)
    return state, n_steps


def snapshot_schedule(t_end: float, dt0: float, stride: int) -> list[float]:
    """Snapshot times k * stride * dt0 below t_end, then t_end itself."""
    if t_end <= 0:
        return [0.0]
    spacing = stride * dt0
    n = max(1, math.ceil(t_end / spacing - 1e-9)) if math.isfinite(spacing) else 1
    return [k * spacing for k in range(n)] + [t_end]


def initial_motion(table, dim: int, grid: SlabGrid):
    """(y0, v0) maps of x_1 for the [init] table kinds rest, sine, shear and mixed."""
    k = 2.0 * np.pi * table.wavenumber / grid.length
    A, V = table.amplitude, table.velocity_amplitude

    def wave(x, harmonic=1, phase=0.0):
        return np.sin(harmonic * k * (np.asarray(x) - grid.x_min) + phase)

    if table.kind == "rest":
        modes = []
    elif table.kind == "sine":
        modes = [(0, 1, 0.0, 1.0)]
    elif table.kind == "shear":
        modes = [(1, 1, 0.0, 1.0)]
    elif table.kind == "mixed":
        modes = [(0, 1, 0.0, 1.0), (1, 1, 0.5 * np.pi, 1.0)]
        if dim == 3:
            modes.append((2, 2, 0.0, 0.5))
    else:
        raise ConfigError(f"unknown init kind '{table.kind}'")

    def y0(x):
        x = np.asarray(x, dtype=float)
        y = np.zeros(x.shape + (dim,))
        y[..., 0] = x
        for axis, harmonic, phase, weight in modes:
            y[..., axis] += weight * A * wave(x, harmonic, phase)
        return y

    def v0(x):
        x = np.asarray(x, dtype=float)
        v = np.zeros(x.shape + (dim,))
        for axis, harmonic, phase, weight in modes:
            v[..., axis] += weight * V * wave(x, harmonic, phase)
        return v

    return y0, v0


def init_from_motion(
    grid: SlabGrid,
    y0: Callable,
    v0: Callable,
    model: ConstitutiveModel,
    prepare: bool = True,
    tau0=None,
    background=None,
    w_min: float = 0.1,
) -> RelaxState:
    """
    Relaxation state from a motion y0(x_1) = A[:, 0] x_1 + periodic part.

    Column 1 of F is differentiated spectrally; the other columns come from the
    affine background A (identity by default). Prepared data sit on the
    equilibrium manifold; otherwise tau0 is an (N, D) array or a map of Phi(F).
    """
    d = model.dim
    A = np.eye(d) if background is None else np.asarray(background, dtype=float)
    x = grid.centers
    periodic = np.asarray(y0(x), dtype=float) - np.outer(x, A[:, 0])
    f1 = A[:, 0] + spectral_derivative(periodic, grid.length)
    v = np.asarray(v0(x), dtype=float).reshape(grid.n_cells, d)

    xi = phi(assemble_F(f1, A)).flat
    if prepare:
        tau = equilibrium_tau(model, xi)
    elif tau0 is None:
        raise ConfigError("unprepared initial data need a tau0")
    elif callable(tau0):
        tau = np.asarray(tau0(xi), dtype=float)
    else:
        tau = np.array(np.broadcast_to(tau0, xi.shape), dtype=float)

    state = RelaxState(grid=grid, v=v, f1=f1, background=A, tau=tau)
    check_determinant(state, w_min)
    return state


def to_equilibrium(state: SlabState) -> EquilState:
    return EquilState(grid=state.grid, v=state.v, f1=state.f1, background=state.background, t=state.t)


def to_augmented(state: RelaxState) -> AugmentedState:
    return AugmentedState(
        grid=state.grid, v=state.v, f1=state.f1, background=state.background, t=state.t, tau=state.tau, xi=state.minors
    )


def tau_offset_map(model: ConstitutiveModel, offset: float):
    shift = model.embed(np.full(len(model.active), offset), base=np.zeros(model.size))
    return lambda xi: equilibrium_tau(model, xi) + shift


def initial_state(config, model: ConstitutiveModel, grid: SlabGrid | None = None) -> SlabState:
    grid = grid or SlabGrid.from_config(config.grid)
    y0, v0 = initial_motion(config.init, model.dim, grid)
    state = init_from_motion(
        grid,
        y0,
        v0,
        model,
        prepare=config.init.prepared,
        tau0=tau_offset_map(model, config.init.tau_offset),
        w_min=config.numerics.w_min,
    )
    system = config.numerics.system
    if system == "equilibrium":
        return to_equilibrium(state)
    if system in ("augmented", "augmented-equilibrium"):
        return to_augmented(state)
    return state


@dataclass
class Trajectory:
    grid: SlabGrid
    times: list[float] = field(default_factory=list)
    states: list[SlabState] = field(default_factory=list)

    def append(self, state: SlabState):
        self.times.append(state.t)
        self.states.append(state)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def final(self) -> SlabState:
        return self.states[-1]


@dataclass
class DiagnosticsSeries:
    """Time-indexed diagnostic records, one per snapshot."""

    records: list[dict] = field(default_factory=list)
    n_steps: int = 0

    @property
    def columns(self) -> list[str]:
        return list(self.records[0]) if self.records else []

    def append(self, record: dict):
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)


def snapshot_record(model: ConstitutiveModel, structure, state: SlabState, eps: float, options: SolverOptions, n_steps: int) -> dict:
    dx = state.grid.dx
    det = options.deterministic
    kinetic = 0.5 * np.sum(state.v * state.v, axis=-1)
    record = {"t": state.t, "step": n_steps}
    if isinstance(state, RelaxState):
        xi = state.xi if isinstance(state, AugmentedState) else state.minors
        entropy = cell_total(kinetic + psi(structure, xi, state.tau), dx, det)
        rate = dissipation(structure, xi, state.tau) / eps
        record.update(
            total_entropy=entropy,
            cumulative_dissipation=state.dissipated,
            H=entropy + state.dissipated,
            dissipation_rate=cell_total(rate, dx, det),
            relaxation_residual=float(np.abs(model.restrict(state.tau + model.Sigma.gradient(xi))).max()),
        )
    else:
        entropy = cell_total(kinetic + model.sigma_E.value(state.minors), dx, det)
        record.update(
            total_entropy=entropy,
            cumulative_dissipation=0.0,
            H=entropy,
            dissipation_rate=0.0,
            relaxation_residual=0.0,
        )
    for i in range(state.dim):
        record[f"total_v{i + 1}"] = cell_total(state.v[:, i], dx, det)
        record[f"total_F{i + 1}1"] = cell_total(state.f1[:, i], dx, det)
    record["min_det"] = float(determinant(state.F).min())
    if isinstance(state, AugmentedState):
        record["constraint_gap"] = float(np.abs(state.xi - state.minors).max())
    return record


def make_stepper(system: str, model: ConstitutiveModel, structure, eps: float, options: SolverOptions):
    """(step(state, dt), equilibrium flag) for one of SYSTEMS."""
    if system == "relax":
        return (lambda s, dt: step_relax(s, model, structure, dt, eps, options)), False
    if system == "equilibrium":
        return (lambda s, dt: step_equilibrium(s, model, dt, options)), True
    if system == "augmented":
        return (lambda s, dt: step_augmented(s, model, structure, dt, eps, options)), False
    if system == "augmented-equilibrium":
        return (lambda s, dt: step_equilibrium_augmented(s, model, dt, options)), True
    raise ConfigError(f"unknown system '{system}', expected one of {SYSTEMS}")


def run(
    config,
    *,
    model: ConstitutiveModel | None = None,
    structure: EntropyStructure | None = None,
    initial: SlabState | None = None,
    times: list[float] | None = None,
    epsilon: float | None = None,
    system: str | None = None,
) -> tuple[Trajectory, DiagnosticsSeries]:
    """
    Advance the configured system to time.t_end, storing a snapshot and a
    diagnostics record at each snapshot time.

    Aborts re-raise the solver error with the partial (trajectory, series)
    attached as `partial`.
    """
    model = model or model_from_config(config.model)
    options = SolverOptions.from_config(config)
    system = system or config.numerics.system
    eps = config.relax.epsilon if epsilon is None else epsilon
    if structure is None and system != "equilibrium":
        structure = build_G(model)
    state = initial if initial is not None else initial_state(config, model)
    step, equilibrium = make_stepper(system, model, structure, eps, options)

    def dt_fn(s):
        return stable_dt(model, s, options.cfl, equilibrium)

    if times is None:
        times = snapshot_schedule(config.time.t_end, dt_fn(state), config.time.snapshot_stride)

    trajectory, series = Trajectory(state.grid), DiagnosticsSeries()
    try:
        check_determinant(state, options.w_min)
        trajectory.append(state)
        series.append(snapshot_record(model, structure, state, eps, options, 0))
        for t_next in times[1:]:
            state, n = advance(state, t_next, step, dt_fn)
            series.n_steps += n
            trajectory.append(state)
            series.append(snapshot_record(model, structure, state, eps, options, series.n_steps))
            logger.debug(f"snapshot t={state.t:.6g} after {series.n_steps} steps", extra={"step": series.n_steps, "t": state.t})
    except PolyrelaxError as e:
        e.partial = (trajectory, series)
        raise
    logger.info(
        f"{system} run finished: {series.n_steps} steps, {len(trajectory)} snapshots, t = {state.t:.6g}",
        extra={"n_cells": state.grid.n_cells, "epsilon": eps},
    )
    return trajectory, series


def abel_residual(trajectory: Trajectory) -> float:
    """Max of |d/dt det F - d_1((cof F)_{i1} v_i)| at interior snapshots, centered in time and space."""
    if len(trajectory) < 3:
        raise InsufficientSnapshots(f"Abel residual needs 3 snapshots, got {len(trajectory)}")
    dx = trajectory.grid.dx
    worst = 0.0
    states, times = trajectory.states, trajectory.times
    for k in range(1, len(states) - 1):
        ddet = (determinant(states[k + 1].F) - determinant(states[k - 1].F)) / (times[k + 1] - times[k - 1])
        F = states[k].F
        transport = np.einsum("ni,ni->n", cofactor(F)[:, :, 0], states[k].v)
        worst = max(worst, float(np.abs(ddet - centered_difference(transport, dx)).max()))
    return worst
