import math

import numpy as np
import pytest

from src.services import dynamics
from src.services.dynamics import (
    SolverOptions,
    abel_residual,
    advance,
    initial_state,
    run,
    snapshot_schedule,
    stable_dt,
    step_relax,
)
from src.services.errors import CFLViolation, ConfigError, DeterminantFloorError, InsufficientSnapshots
from src.services.grid import SlabGrid, restrict

from tests.conftest import make_config


def _conserved(series):
    return [name for name in series.columns if name.startswith("total_v") or name.startswith("total_F")]


class TestRelaxationRun:
    def test_rest_state_is_a_fixed_point(self, quadratic2):
        config = make_config(init={"kind": "rest"})
        trajectory, series = run(config, model=quadratic2)
        first, last = trajectory.states[0], trajectory.final
        assert last.t == pytest.approx(config.time.t_end)
        assert np.array_equal(last.v, first.v)
        assert np.array_equal(last.f1, first.f1)
        assert np.array_equal(last.tau, first.tau)
        assert series.column("cumulative_dissipation").max() == 0.0

    def test_conservation(self, quadratic2, small_config):
        _, series = run(small_config, model=quadratic2)
        for name in _conserved(series):
            values = series.column(name)
            assert np.abs(values - values[0]).max() <= 1e-12, name

    def test_entropy_ledger(self, quadratic2):
        config = make_config(grid={"n_cells": 64}, relax={"epsilon": 0.02})
        _, series = run(config, model=quadratic2)
        dissipated = series.column("cumulative_dissipation")
        assert np.all(np.diff(dissipated) >= -1e-14)
        assert dissipated[-1] > 0
        H = series.column("H")
        assert H[-1] <= H[0] + 1e-8
        assert series.column("total_entropy")[-1] < series.column("total_entropy")[0]

    def test_unprepared_data_relax(self, quadratic2):
        config = make_config(init={"prepared": False, "tau_offset": 0.05}, relax={"epsilon": 0.01})
        _, series = run(config, model=quadratic2)
        residual = series.column("relaxation_residual")
        assert residual[0] == pytest.approx(0.05)
        assert residual[-1] < 0.01

    def test_equilibrium_system(self, quadratic2, small_config):
        config = small_config.with_overrides(numerics={"system": "equilibrium"})
        trajectory, series = run(config, model=quadratic2)
        assert isinstance(trajectory.final, dynamics.EquilState)
        assert series.column("cumulative_dissipation").max() == 0.0
        H = series.column("H")
        assert H[-1] <= H[0] + 1e-10

    def test_polyquad_three_dimensional(self, polyquad3, polyquad3_structure):
        config = make_config(
            model={"family": "polyquad", "dim": 3, "params": {}},
            init={"kind": "mixed"},
            numerics={"reconstruction": "muscl"},
            time={"t_end": 0.02},
        )
        trajectory, series = run(config, model=polyquad3, structure=polyquad3_structure)
        assert trajectory.final.v.shape == (32, 3)
        for name in _conserved(series):
            values = series.column(name)
            assert np.abs(values - values[0]).max() <= 1e-12, name


class TestRefinement:
    @pytest.mark.parametrize("eps", [0.1, 0.01])
    def test_entropy_drift_shrinks(self, quadratic2, quadratic2_structure, eps):
        drifts = []
        for n in (32, 64, 128):
            config = make_config(grid={"n_cells": n}, time={"t_end": 0.1, "snapshot_stride": 5}, relax={"epsilon": eps})
            _, series = run(config, model=quadratic2, structure=quadratic2_structure)
            H = series.column("H")
            assert np.diff(H).max() <= 1e-12
            drifts.append(H[0] - H[-1])
        assert drifts[0] > drifts[1] > drifts[2] > 0
        assert math.log2(drifts[1] / drifts[2]) >= 0.9

    def test_equilibrium_self_convergence(self, quadratic2):
        finals = {}
        for n in (32, 64, 128, 256):
            config = make_config(grid={"n_cells": n}, time={"t_end": 0.1}, numerics={"system": "equilibrium"})
            trajectory, _ = run(config, model=quadratic2)
            finals[n] = trajectory.final
        errors = []
        for n in (32, 64, 128):
            coarse, fine = finals[n], finals[2 * n]
            gap = np.concatenate([coarse.v - restrict(fine.v, 2), coarse.f1 - restrict(fine.f1, 2)], axis=-1)
            errors.append(float(np.abs(gap).sum()) * coarse.grid.dx)
        assert errors[0] > errors[1] > errors[2] > 0
        assert math.log2(errors[1] / errors[2]) >= 0.9


class TestAugmented:
    def test_first_order_constraint_gap_is_round_off(self, quadratic2):
        config = make_config(numerics={"system": "augmented"})
        trajectory, series = run(config, model=quadratic2)
        assert isinstance(trajectory.final, dynamics.AugmentedState)
        assert series.column("constraint_gap").max() <= 1e-10

    def test_three_dimensional_constraint_gap(self, quadratic3):
        config = make_config(
            model={"family": "quadratic", "dim": 3}, init={"kind": "mixed"}, numerics={"system": "augmented"}, time={"t_end": 0.02}
        )
        _, series = run(config, model=quadratic3)
        assert series.column("constraint_gap").max() <= 1e-10


class TestAborts:
    def test_cfl_violation(self, quadratic2, quadratic2_structure, small_config):
        state = initial_state(small_config, quadratic2)
        dt = stable_dt(quadratic2, state, 0.4, equilibrium=False)
        with pytest.raises(CFLViolation):
            step_relax(state, quadratic2, quadratic2_structure, 10 * dt, 0.05, SolverOptions(cfl=0.4))

    def test_determinant_floor_at_start(self, quadratic2):
        config = make_config(numerics={"w_min": 1.5})
        with pytest.raises(DeterminantFloorError) as info:
            run(config, model=quadratic2)
        assert info.value.cell >= 0
        assert info.value.value < 1.5

    def test_abort_carries_partial_results(self, quadratic2):
        config = make_config(init={"amplitude": 0.0, "velocity_amplitude": 0.5}, numerics={"w_min": 0.99})
        with pytest.raises(DeterminantFloorError) as info:
            run(config, model=quadratic2)
        trajectory, series = info.value.partial
        assert len(trajectory) >= 1
        assert len(series.records) == len(trajectory)


class TestTimeStepping:
    def test_snapshot_schedule(self):
        assert snapshot_schedule(1.0, 0.1, 3) == pytest.approx([0.0, 0.3, 0.6, 0.9, 1.0])
        assert snapshot_schedule(0.0, 0.1, 3) == [0.0]

    def test_advance_lands_on_target(self, quadratic2, quadratic2_structure, small_config):
        state = initial_state(small_config, quadratic2)

        def step(s, dt):
            return step_relax(s, quadratic2, quadratic2_structure, dt, 0.05)

        def dt_fn(s):
            return stable_dt(quadratic2, s, 0.4, equilibrium=False)

        final, n = advance(state, 0.013, step, dt_fn)
        assert final.t == 0.013
        assert n >= 1

    def test_wave_speed_of_quadratic_model(self, quadratic2, small_config):
        state = initial_state(small_config.with_overrides(init={"kind": "rest"}), quadratic2)
        # at F = I the instantaneous acoustic tensor of the quadratic model is diag(2 gamma_I, gamma_I)
        speeds = dynamics.cell_wave_speeds(quadratic2, state)
        assert np.allclose(speeds, np.sqrt(8.0), rtol=1e-6)


class TestAbelIdentity:
    def test_residual_decreases_with_refinement(self, quadratic2):
        residuals = []
        for n in (32, 64):
            config = make_config(grid={"n_cells": n}, time={"t_end": 0.05, "snapshot_stride": 2})
            trajectory, _ = run(config, model=quadratic2)
            residuals.append(abel_residual(trajectory))
        assert residuals[1] < residuals[0]

    def test_needs_three_snapshots(self):
        with pytest.raises(InsufficientSnapshots):
            abel_residual(dynamics.Trajectory(SlabGrid(16)))


class TestAugmentedEquilibrium:
    def test_extended_system_keeps_constraint(self, quadratic2):
        config = make_config(numerics={"system": "augmented-equilibrium"})
        trajectory, series = run(config, model=quadratic2)
        assert isinstance(trajectory.final, dynamics.AugmentedState)
        assert series.column("constraint_gap").max() <= 1e-10
        assert series.column("cumulative_dissipation").max() == 0.0
        assert series.column("relaxation_residual").max() <= 1e-12
        for name in _conserved(series):
            values = series.column(name)
            assert np.abs(values - values[0]).max() <= 1e-12, name


class TestInitialData:
    def test_equilibrium_wave_speed(self, quadratic2, small_config):
        state = initial_state(small_config.with_overrides(init={"kind": "rest"}), quadratic2)
        assert dynamics.max_wave_speed(quadratic2, dynamics.to_equilibrium(state)) == pytest.approx(np.sqrt(7.0), rel=1e-6)
        assert dynamics.max_wave_speed(quadratic2, state) == pytest.approx(np.sqrt(8.0), rel=1e-6)

    def test_unprepared_data_need_tau(self, quadratic2, small_grid):
        with pytest.raises(ConfigError):
            dynamics.init_from_motion(small_grid, lambda x: np.stack([x, 0 * x], axis=-1), lambda x: np.zeros((x.size, 2)), quadratic2, prepare=False)

    def test_tau_offset(self, quadratic2, small_grid):
        shift = dynamics.tau_offset_map(quadratic2, 0.1)
        state = dynamics.init_from_motion(
            small_grid, lambda x: np.stack([x, 0 * x], axis=-1), lambda x: np.zeros((x.size, 2)), quadratic2, prepare=False, tau0=shift
        )
        equilibrium = dynamics.init_from_motion(small_grid, lambda x: np.stack([x, 0 * x], axis=-1), lambda x: np.zeros((x.size, 2)), quadratic2)
        assert np.allclose(state.tau - equilibrium.tau, 0.1)

    def test_affine_background(self, quadratic2, small_grid):
        A = np.array([[1.1, 0.0], [0.2, 0.9]])
        state = dynamics.init_from_motion(
            small_grid, lambda x: np.outer(x, A[:, 0]), lambda x: np.zeros((x.size, 2)), quadratic2, background=A
        )
        assert np.allclose(state.F, A)
