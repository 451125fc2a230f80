"""
Experiment orchestration: certificates, runs and epsilon studies.
Compute-bound work runs in executor threads so independent epsilon runs can overlap.
"""
import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from src.config import RunConfig, settings
from src.services import constitutive, diagnostics, dynamics, entropy, gasdyn
from src.services.artifacts import RunArtifacts, snapshot_rows
from src.services.errors import ConfigError, PolyrelaxError
from src.services.logging_config import get_logger

logger = logging.getLogger(__name__)

MIN_EPS_VALUES = 3


def model_certificate(config: RunConfig) -> dict:
    """(h0)-(h2), (char) and the convexity constant of Psi for the configured model."""
    model = constitutive.model_from_config(config.model)
    n, seed = config.checks.n_samples, config.checks.seed
    h0 = constitutive.check_h0(model, n_samples=n, seed=seed)
    h1 = constitutive.check_h1(model, n_samples=n, seed=seed)
    h2 = constitutive.check_h2(model, n_samples=n, seed=seed)
    reports = {"h0": h0.to_dict(), "h1": h1.to_dict(), "h2": h2.to_dict()}
    violated = [name for name, r in (("h0", h0), ("h1", h1), ("h2", h2)) if not r.passed]

    if h0.passed:
        structure = entropy.build_G(model)
        char = entropy.check_char(structure, n_samples=n, seed=seed)
        reports["char"] = char.to_dict()
        reports["entropy"] = structure.to_dict()
        if not char.passed:
            violated.append("char")
    else:
        reports["char"] = None

    delta = entropy.delta_lower_bound(h1.gamma_I_est, h1.gamma_v_est)
    reports["psi_convexity"] = {
        "delta_bound": delta,
        "entropy_lower_constant": entropy.entropy_lower_constant(h1.gamma_I_est, h1.gamma_v_est),
    }
    reports["fd_consistency"] = constitutive.fd_consistency(model, seed=seed)

    if model.name == "gas-lagrangean":
        gas = gasdyn.gas_from_config(config)
        gas_report = gasdyn.check_a_conditions(gas, n_samples=n, seed=seed)
        reports["gas"] = gas_report.to_dict()
        violated.extend(gas_report.violated)

    return {
        "model": model.to_dict(),
        "passed": not violated,
        "violated": violated,
        "reports": reports,
    }


def gas_certificate(config: RunConfig) -> dict:
    gas = gasdyn.gas_from_config(config)
    report = gasdyn.check_a_conditions(gas, n_samples=config.checks.n_samples, seed=config.checks.seed)
    summary = report.to_dict()
    certificate = {
        "gas": gas.to_dict(),
        "passed": report.passed,
        "violated": report.violated,
        "decided_by": summary["decided_by"],
        "advisory": summary["advisory"],
        "report": summary,
    }
    try:
        structure = gasdyn.default_structure(gas, config.gas.crosscheck_dim)
        certificate["lagrangean_entropy_spread"] = gasdyn.lagrangean_entropy_spread(gas, structure, seed=config.checks.seed)
    except PolyrelaxError as e:
        certificate["lagrangean_entropy_spread"] = None
        certificate["notes"] = [f"Lagrangean entropy comparison skipped: {e}"]
    return certificate


def _write_trajectory(artifacts: RunArtifacts, trajectory: dynamics.Trajectory, series: dynamics.DiagnosticsSeries):
    if series.records:
        artifacts.write_csv("diagnostics.csv", series.records)
    for k, state in enumerate(trajectory.states):
        artifacts.write_csv(f"snapshot_{k:04d}.csv", snapshot_rows(state))


def _drift(series: dynamics.DiagnosticsSeries, name: str) -> float:
    values = series.column(name)
    return float(np.abs(values - values[0]).max())


def simulation_summary(trajectory: dynamics.Trajectory, series: dynamics.DiagnosticsSeries) -> dict:
    H = series.column("H")
    summary = {
        "n_steps": series.n_steps,
        "n_snapshots": len(trajectory),
        "t_final": trajectory.final.t,
        "H_max_increase": float(max(0.0, np.diff(H).max())) if H.size > 1 else 0.0,
        "min_det": float(series.column("min_det").min()),
        "conservation_drift": {
            name: _drift(series, name) for name in series.columns if name.startswith("total_v") or name.startswith("total_F")
        },
    }
    if "constraint_gap" in series.columns:
        summary["constraint_gap_max"] = float(series.column("constraint_gap").max())
    if len(trajectory) >= 3:
        summary["abel_residual"] = dynamics.abel_residual(trajectory)
    return summary


async def run_simulation(config: RunConfig, artifacts: RunArtifacts) -> dict:
    log = get_logger(__name__, run_id=artifacts.run_id, command="simulate")
    loop = asyncio.get_running_loop()
    log.info(f"Simulating {config.model.family} ({config.numerics.system}) on {config.grid.n_cells} cells")
    try:
        trajectory, series = await loop.run_in_executor(None, lambda: dynamics.run(config))
    except PolyrelaxError as e:
        partial = getattr(e, "partial", None)
        if partial is not None:
            _write_trajectory(artifacts, *partial)
        artifacts.finish("aborted", reason=f"{type(e).__name__}: {e}", n_steps=partial[1].n_steps if partial else 0)
        raise
    _write_trajectory(artifacts, trajectory, series)
    summary = simulation_summary(trajectory, series)
    artifacts.write_json("summary.json", summary)
    artifacts.finish("completed", n_steps=series.n_steps)
    return summary


def resolve_eps_list(config: RunConfig, eps: list[float] | None) -> list[float]:
    eps_list = list(eps) if eps else list(config.relax.eps_list)
    if len(eps_list) < MIN_EPS_VALUES:
        raise ConfigError(f"converge needs at least {MIN_EPS_VALUES} epsilon values, got {len(eps_list)}")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or min(eps_list) <= 0:
        raise ConfigError("epsilon values must be positive and strictly decreasing")
    return eps_list


async def _map_eps(func, eps_list: list[float], threads: int) -> list:
    """func(eps) for each eps, `threads` at a time; results keep the order of eps_list."""
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [loop.run_in_executor(pool, func, eps) for eps in eps_list]
        return await asyncio.gather(*futures)


async def run_convergence(config: RunConfig, artifacts: RunArtifacts, eps_list: list[float], threads: int | None = None) -> diagnostics.ConvergenceTable:
    threads = threads or settings.THREADS
    log = get_logger(__name__, run_id=artifacts.run_id, command="converge")
    loop = asyncio.get_running_loop()

    model = constitutive.model_from_config(config.model)
    structure = entropy.build_G(model)
    times = diagnostics.snapshot_times(config, model)
    log.info(f"Computing the equilibrium reference at refinement {config.numerics.refinement}")
    reference = await loop.run_in_executor(None, lambda: diagnostics.compute_reference(config, model, times))
    floor = await loop.run_in_executor(None, lambda: diagnostics.discretization_floor(config, model, reference))
    log.info(f"Discretization floor {floor:.3e}; running {len(eps_list)} epsilon values on {threads} threads")

    def one(eps: float) -> diagnostics.EpsilonRow:
        return diagnostics.run_epsilon(config, model, structure, reference, eps)

    rows = await _map_eps(one, eps_list, threads)
    table = diagnostics.assemble_table(rows, floor, config.numerics.floor_factor, times, config.init.prepared)

    artifacts.write_csv("convergence.csv", [r.to_csv_row() for r in table.rows])
    series = [
        {"eps": r.eps, "t": t, "e_r": e}
        for r in table.rows
        for t, e in zip(reference.times, r.e_r_series)
    ]
    artifacts.write_csv("relative_entropy.csv", series, columns=["eps", "t", "e_r"])
    summary = table.summary()
    summary["slope_threshold"] = config.converge.slope_threshold
    summary["passed"] = table.slope is not None and table.slope >= config.converge.slope_threshold
    summary["reference"] = {"refinement": config.numerics.refinement, "n_steps": reference.n_steps, "gradient_growth": reference.gradient_growth}
    artifacts.write_json("summary.json", summary)
    artifacts.finish("completed", n_steps=sum(r.n_steps for r in table.rows))
    return table


async def run_gas_simulation(config: RunConfig, artifacts: RunArtifacts) -> dict:
    gas = gasdyn.gas_from_config(config)
    loop = asyncio.get_running_loop()
    try:
        snapshots, records, n_steps = await loop.run_in_executor(None, lambda: gasdyn.run_euler(config, gas))
    except PolyrelaxError as e:
        snapshots, records = getattr(e, "partial", ([], []))
        for k, state in enumerate(snapshots):
            artifacts.write_csv(f"snapshot_{k:04d}.csv", gasdyn.euler_snapshot_rows(gas, state))
        if records:
            artifacts.write_csv("diagnostics.csv", records)
        artifacts.finish("aborted", reason=f"{type(e).__name__}: {e}")
        raise
    for k, state in enumerate(snapshots):
        artifacts.write_csv(f"snapshot_{k:04d}.csv", gasdyn.euler_snapshot_rows(gas, state))
    artifacts.write_csv("diagnostics.csv", records)
    H = np.array([r["H_plus_dissipation"] for r in records])
    summary = {
        "gas": gas.to_dict(),
        "n_steps": n_steps,
        "t_final": snapshots[-1].t,
        "H_max_increase": float(max(0.0, np.diff(H).max())) if H.size > 1 else 0.0,
        "mass_drift": float(abs(records[-1]["total_rho"] - records[0]["total_rho"])),
        "momentum_drift": float(abs(records[-1]["total_m"] - records[0]["total_m"])),
        "min_rho": min(r["min_rho"] for r in records),
    }
    artifacts.write_json("summary.json", summary)
    artifacts.finish("completed", n_steps=n_steps)
    return summary


async def run_gas_convergence(config: RunConfig, artifacts: RunArtifacts, eps_list: list[float]) -> gasdyn.EulerEpsilonStudy:
    gas = gasdyn.gas_from_config(config)
    loop = asyncio.get_running_loop()
    study = await loop.run_in_executor(None, lambda: gasdyn.euler_epsilon_study(config, gas, eps_list))
    artifacts.write_csv("convergence.csv", study.rows())
    artifacts.write_json("summary.json", {"monotone": study.monotone, "rows": study.rows()})
    artifacts.finish("completed")
    return study


async def run_crosscheck(config: RunConfig, artifacts: RunArtifacts) -> gasdyn.CrossCheckReport:
    gas = gasdyn.gas_from_config(config)
    loop = asyncio.get_running_loop()
    try:
        report = await loop.run_in_executor(None, lambda: gasdyn.lagrangean_cross_check(gas, config))
    except PolyrelaxError as e:
        artifacts.finish("aborted", reason=f"{type(e).__name__}: {e}")
        raise
    rows = [
        {"n_cells": n, "gap_L1": g, "abel_residual": a}
        for n, g, a in zip(report.n_cells, report.gap_L1, report.abel_residual)
    ]
    artifacts.write_csv("crosscheck.csv", rows)
    artifacts.write_json("summary.json", report.to_dict())
    artifacts.finish("completed")
    return report
