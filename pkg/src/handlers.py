"""
Subcommand handlers.
Each handler loads the run configuration, applies CLI overrides and delegates to the worker.
"""
import logging
from pathlib import Path

from src.config import RunConfig, load_run_config, settings
from src.services.artifacts import RunArtifacts
from src.services.commands import EXIT_FAILED, EXIT_OK, CommandResult, commands
from src.services.errors import ConfigError
from src.services.selftest import run_selftest
from src import worker

logger = logging.getLogger(__name__)


def resolve_config(config_path: str | None, out: str | None = None, eps: list[float] | None = None, seed: int | None = None, simulate: bool = False) -> RunConfig:
    """Config from --config (defaults when absent) with the --out/--eps/--seed overrides applied."""
    config = load_run_config(config_path) if config_path else RunConfig()
    updates: dict = {}
    if out:
        updates["output"] = {"directory": out}
    if eps:
        updates["relax"] = {"eps_list": list(eps)}
        if simulate:
            updates["relax"]["epsilon"] = eps[0]
    if seed is not None:
        updates["checks"] = {"seed": seed}
    return config.with_overrides(**updates) if updates else config


def _artifacts(config: RunConfig, command: str) -> RunArtifacts:
    artifacts = RunArtifacts(Path(config.output.directory), command, config, seed=config.checks.seed)
    artifacts.start()
    return artifacts


def _verdict(payload: dict, passed: bool) -> CommandResult:
    return CommandResult(exit_code=EXIT_OK if passed else EXIT_FAILED, payload=payload)


@commands.register("check-model", "certify (h0)-(h2), (char) and the Psi convexity bound")
async def handle_check_model(config: str | None = None, out: str | None = None, seed: int | None = None, **_) -> CommandResult:
    run_config = resolve_config(config, out=out, seed=seed)
    artifacts = _artifacts(run_config, "check-model")
    certificate = worker.model_certificate(run_config)
    artifacts.write_json("certificate.json", certificate)
    artifacts.finish("completed", passed=certificate["passed"])
    if not certificate["passed"]:
        logger.warning(f"Model check failed: {', '.join(certificate['violated'])}")
    return _verdict(certificate, certificate["passed"])


@commands.register("simulate", "run the configured slab system and write snapshots and diagnostics")
async def handle_simulate(config: str | None = None, out: str | None = None, eps: list[float] | None = None, seed: int | None = None, **_) -> CommandResult:
    run_config = resolve_config(config, out=out, eps=eps, seed=seed, simulate=True)
    artifacts = _artifacts(run_config, "simulate")
    summary = await worker.run_simulation(run_config, artifacts)
    return CommandResult(payload=summary)


@commands.register("converge", "epsilon study of the relative entropy against a refined equilibrium run")
async def handle_converge(
    config: str | None = None, out: str | None = None, eps: list[float] | None = None, threads: int | None = None, seed: int | None = None, **_
) -> CommandResult:
    run_config = resolve_config(config, out=out, eps=eps, seed=seed)
    eps_list = worker.resolve_eps_list(run_config, eps)
    artifacts = _artifacts(run_config, "converge")
    table = await worker.run_convergence(run_config, artifacts, eps_list, threads or settings.THREADS)
    summary = table.summary()
    passed = table.slope is not None and table.slope >= run_config.converge.slope_threshold
    summary["passed"] = passed
    return _verdict(summary, passed)


@commands.register("gas-check", "certify (a0)-(a3) and the convexity of H for the gas model")
async def handle_gas_check(config: str | None = None, out: str | None = None, seed: int | None = None, **_) -> CommandResult:
    run_config = resolve_config(config, out=out, seed=seed)
    artifacts = _artifacts(run_config, "gas check")
    certificate = worker.gas_certificate(run_config)
    artifacts.write_json("certificate.json", certificate)
    artifacts.finish("completed", passed=certificate["passed"])
    return _verdict(certificate, certificate["passed"])


@commands.register("gas-simulate", "Eulerian pressure-relaxation run")
async def handle_gas_simulate(config: str | None = None, out: str | None = None, eps: list[float] | None = None, **_) -> CommandResult:
    run_config = resolve_config(config, out=out, eps=eps, simulate=True)
    artifacts = _artifacts(run_config, "gas simulate")
    return CommandResult(payload=await worker.run_gas_simulation(run_config, artifacts))


@commands.register("gas-converge", "Eulerian epsilon study against the p_E Euler reference")
async def handle_gas_converge(config: str | None = None, out: str | None = None, eps: list[float] | None = None, **_) -> CommandResult:
    run_config = resolve_config(config, out=out, eps=eps)
    eps_list = worker.resolve_eps_list(run_config, eps)
    artifacts = _artifacts(run_config, "gas converge")
    study = await worker.run_gas_convergence(run_config, artifacts, eps_list)
    return _verdict({"monotone": study.monotone, "rows": study.rows()}, study.monotone)


@commands.register("gas-crosscheck", "Lagrangean slab run against the Eulerian run from the same data")
async def handle_gas_crosscheck(config: str | None = None, out: str | None = None, **_) -> CommandResult:
    run_config = resolve_config(config, out=out)
    artifacts = _artifacts(run_config, "gas crosscheck")
    report = await worker.run_crosscheck(run_config, artifacts)
    return CommandResult(payload=report.to_dict())


@commands.register("selftest", "run the embedded closed-form oracles")
async def handle_selftest(perturb: dict[str, float] | None = None, **_) -> CommandResult:
    try:
        report = run_selftest(perturb)
    except KeyError as e:
        raise ConfigError(str(e)) from e
    payload = report.to_dict()
    message = None
    if not report.passed:
        message = f"selftest failed: {payload['first_failure']}"
    return CommandResult(exit_code=EXIT_OK if report.passed else EXIT_FAILED, payload=payload, message=message)
