"""
Relative-entropy diagnostics comparing relaxation runs with smooth equilibrium
solutions, the Chapman-Enskog diffusivity, and the epsilon-convergence study.

All fields live in slab geometry, so spatial derivatives d_alpha reduce to d_1.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress, qmc

from src.services import dynamics
from src.services.constitutive import ConstitutiveModel, model_from_config
from src.services.dynamics import EquilState, RelaxState, SolverOptions, Trajectory
from src.services.entropy import EntropyStructure, build_G, dissipation, entropy_lower_constant, equilibrium_tau, psi
from src.services.errors import GradientBlowUp, GridError, InsufficientSnapshots, PolyrelaxError
from src.services.grid import SlabGrid, cell_total, centered_difference, restrict
from src.services.minors import column_jacobian, dphi, phi

logger = logging.getLogger(__name__)

TIME_TOL = 1e-12


@dataclass
class HatDerivatives:
    dv: np.ndarray  # (N, d)  d_1 v^
    dstress: np.ndarray  # (N, D)  d_1 grad sigma_E(Phi(F^))


def hat_derivatives(model: ConstitutiveModel, hat: EquilState) -> HatDerivatives:
    dx = hat.grid.dx
    return HatDerivatives(
        dv=centered_difference(hat.v, dx),
        dstress=centered_difference(model.sigma_E.gradient(hat.minors), dx),
    )


def _require_comparable(state, hat):
    state.grid.require_same(hat.grid)
    if abs(state.t - hat.t) > TIME_TOL * max(1.0, abs(hat.t)):
        raise GridError(f"states at different times: {state.t} vs {hat.t}")


def _quadratic_errors(model: ConstitutiveModel, xi, F, v, hat: EquilState, derivs: HatDerivatives):
    xi_h = hat.minors
    J, J_h = column_jacobian(F), column_jacobian(hat.F)
    dJ = J - J_h
    dv = v - hat.v
    gE, gE_h = model.sigma_E.gradient(xi), model.sigma_E.gradient(xi_h)
    remainder = gE - gE_h - np.einsum("nAB,nB->nA", model.sigma_E.hessian(xi_h), xi - xi_h)
    Q1 = np.einsum("nA,nAi,ni->n", derivs.dstress, dJ, dv)
    Q2 = np.einsum("ni,nAi,nA->n", derivs.dv, J_h, remainder)
    Q3 = np.einsum("ni,nA,nAi->n", derivs.dv, gE - gE_h, dJ)
    return Q1, Q2, Q3, J, gE


@dataclass
class ErrorTerms:
    Q1: np.ndarray
    Q2: np.ndarray
    Q3: np.ndarray
    L: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.Q1 + self.Q2 + self.Q3 + self.L


def error_terms(model: ConstitutiveModel, state: RelaxState, hat: EquilState, derivatives: HatDerivatives | None = None) -> ErrorTerms:
    """Quadratic errors Q1, Q2, Q3 and the linear error L, cell by cell."""
    state.grid.require_same(hat.grid)
    derivs = derivatives or hat_derivatives(model, hat)
    xi = state.minors
    Q1, Q2, Q3, J, gE = _quadratic_errors(model, xi, state.F, state.v, hat, derivs)
    T = model.sigma_I.gradient(xi) + state.tau
    L = np.einsum("ni,nA,nAi->n", derivs.dv, T - gE, J)
    return ErrorTerms(Q1=Q1, Q2=Q2, Q3=Q3, L=L)


@dataclass
class RelEntropyReport:
    e_r_field: np.ndarray
    total_e_r: float
    flux_field: np.ndarray
    Q1_L1: float
    Q2_L1: float
    Q3_L1: float
    L_L1: float
    Q_total: float  # signed integral of Q1 + Q2 + Q3 + L
    dissipation_field: np.ndarray
    dissipation_total: float
    lower_bound_field: np.ndarray
    balance_residual: float | None = None

    def to_dict(self) -> dict:
        return {
            "e_r_total": self.total_e_r,
            "e_r_min": float(self.e_r_field.min()),
            "Q1_L1": self.Q1_L1,
            "Q2_L1": self.Q2_L1,
            "Q3_L1": self.Q3_L1,
            "L_L1": self.L_L1,
            "Q_total": self.Q_total,
            "dissipation_total": self.dissipation_total,
            "balance_residual": self.balance_residual,
        }


def relative_entropy(
    structure: EntropyStructure,
    state: RelaxState,
    hat: EquilState,
    derivatives: HatDerivatives | None = None,
    deterministic: bool = True,
) -> RelEntropyReport:
    model = structure.model
    _require_comparable(state, hat)
    dx = state.grid.dx
    xi, xi_h = state.minors, hat.minors
    dv = state.v - hat.v
    gE_h = model.sigma_E.gradient(xi_h)

    e_r = (
        0.5 * np.sum(dv * dv, axis=-1)
        + psi(structure, xi, state.tau)
        - model.sigma_E.value(xi_h)
        - np.einsum("nA,nA->n", gE_h, xi - xi_h)
    )
    T = model.sigma_I.gradient(xi) + state.tau
    flux = np.einsum("nA,ni,nAi->n", T - gE_h, dv, column_jacobian(state.F))
    D = dissipation(structure, xi, state.tau)
    terms = error_terms(model, state, hat, derivatives)

    c = entropy_lower_constant(model.gamma_I, model.gamma_v)
    gap_tau = state.tau - equilibrium_tau(model, xi_h)
    lower = c * (np.sum(dv * dv, axis=-1) + np.sum((xi - xi_h) ** 2, axis=-1) + np.sum(gap_tau**2, axis=-1))

    def total(values):
        return cell_total(values, dx, deterministic)

    return RelEntropyReport(
        e_r_field=e_r,
        total_e_r=total(e_r),
        flux_field=flux,
        Q1_L1=total(np.abs(terms.Q1)),
        Q2_L1=total(np.abs(terms.Q2)),
        Q3_L1=total(np.abs(terms.Q3)),
        L_L1=total(np.abs(terms.L)),
        Q_total=total(terms.total),
        dissipation_field=D,
        dissipation_total=total(D),
        lower_bound_field=lower,
    )


def _check_pair(trajectory: Trajectory, hats: Trajectory | list):
    hat_states = hats.states if isinstance(hats, Trajectory) else list(hats)
    if len(trajectory) < 3 or len(hat_states) < 3:
        raise InsufficientSnapshots(f"balance residual needs 3 snapshots, got {len(trajectory)} and {len(hat_states)}")
    if len(hat_states) != len(trajectory):
        raise GridError(f"{len(trajectory)} snapshots compared with {len(hat_states)} reference snapshots")
    return hat_states


def _centered_balance(times: list[float], totals: list[float], sources: list[float]) -> float:
    worst = 0.0
    for k in range(1, len(times) - 1):
        rate = (totals[k + 1] - totals[k - 1]) / (times[k + 1] - times[k - 1])
        worst = max(worst, abs(rate - sources[k]))
    return worst


def relen_balance_residual(
    structure: EntropyStructure,
    trajectory: Trajectory,
    hats,
    eps: float,
    derivatives: list[HatDerivatives] | None = None,
    deterministic: bool = True,
) -> float:
    """
    Max over interior snapshots of |d/dt int e_r + int D/eps - int (Q1+Q2+Q3+L)|,
    time derivative by centered differences. The flux integrates to zero on the
    periodic slab.
    """
    hat_states = _check_pair(trajectory, hats)
    totals, sources = [], []
    for k, (state, hat) in enumerate(zip(trajectory.states, hat_states)):
        report = relative_entropy(structure, state, hat, derivatives[k] if derivatives else None, deterministic)
        totals.append(report.total_e_r)
        sources.append(report.Q_total - report.dissipation_total / eps)
    return _centered_balance(trajectory.times, totals, sources)


def chapman_enskog_tensor(model: ConstitutiveModel, F) -> np.ndarray:
    """D_{i alpha}^{j beta} = hess Sigma^{AB}(Phi(F)) dPhi^A/dF_{i alpha} dPhi^B/dF_{j beta}, shape (..., d, d, d, d)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    J = dphi(F)
    H = model.Sigma.hessian(phi(F).flat)
    M = np.einsum("...Ap,...AB,...Bq->...pq", J, H, J)
    return M.reshape(F.shape[:-2] + (d, d, d, d))


def ellipticity(tensor: np.ndarray) -> np.ndarray:
    """lambda_min of the symmetric d^2 x d^2 matrix M -> D : M."""
    d = tensor.shape[-1]
    M = tensor.reshape(tensor.shape[:-4] + (d * d, d * d))
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))[..., 0]


def chapman_enskog_stress(model: ConstitutiveModel, F, dv) -> np.ndarray:
    """
    D_{i alpha}^{j 1} d_1 v_j, shape (..., d, d). The effective stress of the
    relaxation system is the equilibrium stress plus eps times this term.
    """
    D = chapman_enskog_tensor(model, F)
    return np.einsum("...iaj,...j->...ia", D[..., 0], np.asarray(dv, dtype=float))


@dataclass
class EquilibriumRelEntropyReport:
    eta_field: np.ndarray
    total_eta: float
    flux_field: np.ndarray
    Q_field: np.ndarray
    Q_total: float
    Q_L1: float

    def to_dict(self) -> dict:
        return {"eta_total": self.total_eta, "eta_min": float(self.eta_field.min()), "Q_total": self.Q_total, "Q_L1": self.Q_L1}


def equilibrium_relative_entropy(
    model: ConstitutiveModel,
    state_a: EquilState,
    state_b: EquilState,
    derivatives: HatDerivatives | None = None,
    deterministic: bool = True,
) -> EquilibriumRelEntropyReport:
    """eta(v, Phi(F) | v^, Phi(F^)), its flux q^1 and the quadratic error Q, with state_b the smooth one."""
    _require_comparable(state_a, state_b)
    dx = state_a.grid.dx
    derivs = derivatives or hat_derivatives(model, state_b)
    xi, xi_h = state_a.minors, state_b.minors
    dv = state_a.v - state_b.v
    gE_h = model.sigma_E.gradient(xi_h)
    eta = (
        0.5 * np.sum(dv * dv, axis=-1)
        + model.sigma_E.value(xi)
        - model.sigma_E.value(xi_h)
        - np.einsum("nA,nA->n", gE_h, xi - xi_h)
    )
    Q1, Q2, Q3, J, gE = _quadratic_errors(model, xi, state_a.F, state_a.v, state_b, derivs)
    Q = Q1 + Q2 + Q3
    flux = np.einsum("nA,ni,nAi->n", gE - gE_h, dv, J)
    return EquilibriumRelEntropyReport(
        eta_field=eta,
        total_eta=cell_total(eta, dx, deterministic),
        flux_field=flux,
        Q_field=Q,
        Q_total=cell_total(Q, dx, deterministic),
        Q_L1=cell_total(np.abs(Q), dx, deterministic),
    )


def equilibrium_balance_residual(
    model: ConstitutiveModel,
    trajectory: Trajectory,
    hats,
    derivatives: list[HatDerivatives] | None = None,
    deterministic: bool = True,
) -> float:
    """Max over interior snapshots of |d/dt int eta - int Q|."""
    hat_states = _check_pair(trajectory, hats)
    totals, sources = [], []
    for k, (state, hat) in enumerate(zip(trajectory.states, hat_states)):
        report = equilibrium_relative_entropy(model, state, hat, derivatives[k] if derivatives else None, deterministic)
        totals.append(report.total_eta)
        sources.append(report.Q_total)
    return _centered_balance(trajectory.times, totals, sources)


def lipschitz_dphi_constant(dim: int, radius: float = 0.5, n_samples: int = 512, seed: int = 0) -> float:
    """
    Sampled C in |dPhi(F) - dPhi(F^)| <= C |Phi(F) - Phi(F^)| for F, F^ in the
    box of half-width `radius` around the identity.
    """
    sampler = qmc.LatinHypercube(d=2 * dim * dim, seed=np.random.default_rng(seed))
    unit = sampler.random(n_samples).reshape(n_samples, 2, dim, dim)
    F = np.eye(dim) + radius * (2.0 * unit - 1.0)
    F_a, F_b = F[:, 0], F[:, 1]
    num = np.linalg.norm((dphi(F_a) - dphi(F_b)).reshape(n_samples, -1), axis=-1)
    den = np.linalg.norm(phi(F_a).flat - phi(F_b).flat, axis=-1)
    return float(np.max(num / den))


# epsilon-convergence study


@dataclass
class Reference:
    """Refined equilibrium solution restricted to the coarse grid at the snapshot times."""

    times: list[float]
    hats: list[EquilState]
    derivatives: list[HatDerivatives]
    fine_grid: SlabGrid
    n_steps: int
    gradient_growth: float


def _restricted(model: ConstitutiveModel, fine: EquilState, coarse_grid: SlabGrid, factor: int):
    dxf = fine.grid.dx
    hat = EquilState(
        grid=coarse_grid,
        v=restrict(fine.v, factor),
        f1=restrict(fine.f1, factor),
        background=fine.background,
        t=fine.t,
    )
    derivs = HatDerivatives(
        dv=restrict(centered_difference(fine.v, dxf), factor),
        dstress=restrict(centered_difference(model.sigma_E.gradient(fine.minors), dxf), factor),
    )
    return hat, derivs


def snapshot_times(config, model: ConstitutiveModel) -> list[float]:
    """Schedule shared by the reference and every epsilon run, from the coarse instantaneous CFL step."""
    grid = SlabGrid.from_config(config.grid)
    y0, v0 = dynamics.initial_motion(config.init, model.dim, grid)
    start = dynamics.init_from_motion(grid, y0, v0, model, prepare=True, w_min=config.numerics.w_min)
    dt0 = dynamics.stable_dt(model, start, config.time.cfl, equilibrium=False)
    return dynamics.snapshot_schedule(config.time.t_end, dt0, config.time.snapshot_stride)


def compute_reference(config, model: ConstitutiveModel, times: list[float] | None = None) -> Reference:
    """
    Equilibrium run on the grid refined by numerics.refinement, cell-averaged onto
    the coarse grid. Spatial derivatives of the reference are taken on the fine
    grid before restriction. Raises GradientBlowUp once max |d_1 F| grows by
    numerics.blowup_factor.
    """
    times = times or snapshot_times(config, model)
    factor = config.numerics.refinement
    coarse = SlabGrid.from_config(config.grid)
    fine_grid = coarse.refined(factor)
    options = SolverOptions.from_config(config)

    y0, v0 = dynamics.initial_motion(config.init, model.dim, fine_grid)
    state = dynamics.to_equilibrium(
        dynamics.init_from_motion(fine_grid, y0, v0, model, prepare=True, w_min=options.w_min)
    )

    def gradient_size(s):
        return float(np.abs(centered_difference(s.f1, fine_grid.dx)).max())

    initial_gradient = gradient_size(state)
    limit = config.numerics.blowup_factor * initial_gradient

    def step(s, dt):
        return dynamics.step_equilibrium(s, model, dt, options)

    def dt_fn(s):
        return dynamics.stable_dt(model, s, options.cfl, equilibrium=True)

    hats, derivatives, n_steps, growth = [], [], 0, 1.0
    for t_next in times:
        state, n = dynamics.advance(state, t_next, step, dt_fn)
        n_steps += n
        size = gradient_size(state)
        if initial_gradient > 0:
            growth = max(growth, size / initial_gradient)
            if size > limit:
                raise GradientBlowUp(
                    f"reference gradient grew by {size / initial_gradient:.1f} (limit {config.numerics.blowup_factor}) "
                    f"at t = {state.t:.6g}; choose an earlier t_end"
                )
        hat, derivs = _restricted(model, state, coarse, factor)
        hats.append(hat)
        derivatives.append(derivs)

    logger.info(f"Reference computed on {fine_grid.n_cells} cells in {n_steps} steps, gradient growth {growth:.2f}")
    return Reference(times=list(times), hats=hats, derivatives=derivatives, fine_grid=fine_grid, n_steps=n_steps, gradient_growth=growth)


@dataclass
class EpsilonRow:
    eps: float
    e_r_sup: float = math.nan
    e_r_final: float = math.nan
    gap_v_L2: float = math.nan
    gap_F_L2: float = math.nan
    gap_tau_L2: float = math.nan
    dissipation_total: float = math.nan
    floor_limited: bool = False
    status: str = "ok"
    n_steps: int = 0
    e_r_series: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_csv_row(self) -> dict:
        return {
            "eps": self.eps,
            "e_r_sup": self.e_r_sup,
            "e_r_final": self.e_r_final,
            "gap_v_L2": self.gap_v_L2,
            "gap_F_L2": self.gap_F_L2,
            "gap_tau_L2": self.gap_tau_L2,
            "dissipation_total": self.dissipation_total,
            "floor_limited": self.floor_limited,
            "status": self.status,
        }


def _l2(values: np.ndarray, dx: float, deterministic: bool) -> float:
    return math.sqrt(cell_total(np.sum(values * values, axis=-1), dx, deterministic))


def _relax_start(config, model: ConstitutiveModel, hat: EquilState) -> RelaxState:
    xi = hat.minors
    if config.init.prepared:
        tau = equilibrium_tau(model, xi)
    else:
        tau = dynamics.tau_offset_map(model, config.init.tau_offset)(xi)
    return RelaxState(grid=hat.grid, v=hat.v, f1=hat.f1, background=hat.background, t=hat.t, tau=tau)


def run_epsilon(config, model: ConstitutiveModel, structure: EntropyStructure, reference: Reference, eps: float) -> EpsilonRow:
    """Relaxation run at one epsilon compared with the reference; aborts become a flagged row."""
    deterministic = config.numerics.deterministic_reduction
    start = _relax_start(config, model, reference.hats[0])
    try:
        trajectory, series = dynamics.run(
            config, model=model, structure=structure, initial=start, times=reference.times, epsilon=eps, system="relax"
        )
    except PolyrelaxError as e:
        logger.warning(f"run at eps={eps} aborted: {e}", extra={"epsilon": eps})
        return EpsilonRow(eps=eps, status=f"aborted: {e}")

    totals = [
        relative_entropy(structure, state, hat, derivs, deterministic).total_e_r
        for state, hat, derivs in zip(trajectory.states, reference.hats, reference.derivatives)
    ]
    final, hat = trajectory.final, reference.hats[-1]
    dx = final.grid.dx
    row = EpsilonRow(
        eps=eps,
        e_r_sup=max(totals),
        e_r_final=totals[-1],
        gap_v_L2=_l2(final.v - hat.v, dx, deterministic),
        gap_F_L2=_l2(final.f1 - hat.f1, dx, deterministic),
        gap_tau_L2=_l2(final.tau - equilibrium_tau(model, hat.minors), dx, deterministic),
        dissipation_total=final.dissipated,
        n_steps=series.n_steps,
        e_r_series=totals,
    )
    logger.info(f"eps={eps:g}: sup e_r = {row.e_r_sup:.4e}", extra={"epsilon": eps})
    return row


def discretization_floor(config, model: ConstitutiveModel, reference: Reference) -> float:
    """sup_t of int eta between the coarse equilibrium run and the reference, both from the same data."""
    start = reference.hats[0]
    trajectory, _ = dynamics.run(config, model=model, initial=start, times=reference.times, system="equilibrium")
    deterministic = config.numerics.deterministic_reduction
    return max(
        equilibrium_relative_entropy(model, state, hat, derivs, deterministic).total_eta
        for state, hat, derivs in zip(trajectory.states, reference.hats, reference.derivatives)
    )


def gronwall_fit(times: list[float], rows: list[EpsilonRow], floor: float) -> tuple[float, float]:
    """
    Smallest (C1, C2) with e_r(t) <= (e_r(0) + C1 eps + floor) exp(C2 t) on the recorded
    series, C1 taken from the first snapshot after t = 0.
    """
    usable = [r for r in rows if r.ok and len(r.e_r_series) > 1]
    if not usable or len(times) < 2:
        return math.nan, math.nan
    C1 = max(max(0.0, (r.e_r_series[1] - r.e_r_series[0] - floor) / r.eps) for r in usable)
    C2 = 0.0
    for r in usable:
        base = r.e_r_series[0] + C1 * r.eps + floor
        for t, value in zip(times[1:], r.e_r_series[1:]):
            if value > base > 0 and t > 0:
                C2 = max(C2, math.log(value / base) / t)
    return C1, C2


@dataclass
class ConvergenceTable:
    rows: list[EpsilonRow]
    floor: float
    floor_factor: float
    slope: float | None = None
    intercept: float | None = None
    stderr: float | None = None
    n_fit: int = 0
    C1: float = math.nan
    C2: float = math.nan
    prepared: bool = True
    notes: list[str] = field(default_factory=list)

    @property
    def band(self) -> tuple[float, float] | None:
        if self.slope is None:
            return None
        return self.slope - 2.0 * self.stderr, self.slope + 2.0 * self.stderr

    @property
    def gaps_monotone(self) -> bool:
        """L2 gaps in v, F and tau decrease along the (decreasing) epsilon list."""
        ok = [r for r in self.rows if r.ok]
        for name in ("gap_v_L2", "gap_F_L2", "gap_tau_L2"):
            values = [getattr(r, name) for r in ok]
            if any(b > a for a, b in zip(values, values[1:])):
                return False
        return True

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "band": list(self.band) if self.band else None,
            "n_fit": self.n_fit,
            "floor": self.floor,
            "floor_factor": self.floor_factor,
            "excluded_eps": [r.eps for r in self.rows if r.floor_limited or not r.ok],
            "gaps_monotone": self.gaps_monotone,
            "gronwall": {"C1": self.C1, "C2": self.C2},
            "prepared": self.prepared,
            "notes": self.notes,
        }


def assemble_table(rows: list[EpsilonRow], floor: float, floor_factor: float, times: list[float], prepared: bool = True) -> ConvergenceTable:
    rows = sorted(rows, key=lambda r: -r.eps)
    for row in rows:
        row.floor_limited = bool(row.ok and row.e_r_sup <= floor_factor * floor)
        if row.floor_limited:
            logger.warning(f"eps={row.eps:g} is floor-limited (sup e_r {row.e_r_sup:.3e} <= {floor_factor} x floor {floor:.3e})")

    table = ConvergenceTable(rows=rows, floor=floor, floor_factor=floor_factor, prepared=prepared)
    table.notes.append("the relaxation constant s is not estimated; only the fitted C1, C2 are reported")
    fit = [r for r in rows if r.ok and not r.floor_limited and r.e_r_sup > 0]
    table.n_fit = len(fit)
    if len(fit) >= 2:
        result = linregress(np.log([r.eps for r in fit]), np.log([r.e_r_sup for r in fit]))
        table.slope = float(result.slope)
        table.intercept = float(result.intercept)
        table.stderr = float(result.stderr)
    else:
        table.notes.append("fewer than two usable epsilon values, no slope fitted")
    table.C1, table.C2 = gronwall_fit(times, rows, floor)
    return table


def convergence_study(config, eps_list: list[float] | None = None) -> ConvergenceTable:
    """Sequential epsilon study; the CLI runs the rows concurrently through run_epsilon."""
    eps_list = list(eps_list or config.relax.eps_list or [config.relax.epsilon])
    model = model_from_config(config.model)
    structure = build_G(model)
    times = snapshot_times(config, model)
    reference = compute_reference(config, model, times)
    floor = discretization_floor(config, model, reference)
    rows = [run_epsilon(config, model, structure, reference, eps) for eps in eps_list]
    return assemble_table(rows, floor, config.numerics.floor_factor, times, config.init.prepared)

