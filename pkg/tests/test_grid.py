import numpy as np
import pytest

from src.services import finite_volume as fv
from src.services.errors import GridError
from src.services.grid import SlabGrid, cell_total, centered_difference, restrict, spectral_derivative


class TestSlabGrid:
    def test_geometry(self):
        grid = SlabGrid(10, 0.0, 2.0)
        assert grid.dx == pytest.approx(0.2)
        assert grid.centers[0] == pytest.approx(0.1)
        assert grid.refined(4).n_cells == 40

    @pytest.mark.parametrize("n_cells, x_min, x_max", [(4, 0.0, 1.0), (16, 1.0, 1.0)])
    def test_invalid(self, n_cells, x_min, x_max):
        with pytest.raises(GridError):
            SlabGrid(n_cells, x_min, x_max)

    def test_mismatch(self):
        with pytest.raises(GridError):
            SlabGrid(16).require_same(SlabGrid(32))
        SlabGrid(16).require_same(SlabGrid(16))


class TestCellOperations:
    def test_spectral_derivative_of_sine(self):
        grid = SlabGrid(64)
        x = grid.centers
        u = np.stack([np.sin(2 * np.pi * x), np.cos(6 * np.pi * x)], axis=-1)
        du = spectral_derivative(u, grid.length)
        expected = np.stack([2 * np.pi * np.cos(2 * np.pi * x), -6 * np.pi * np.sin(6 * np.pi * x)], axis=-1)
        assert np.abs(du - expected).max() <= 1e-10

    def test_centered_difference_is_second_order(self):
        errors = []
        for n in (32, 64):
            x = SlabGrid(n).centers
            errors.append(np.abs(centered_difference(np.sin(2 * np.pi * x), 1.0 / n) - 2 * np.pi * np.cos(2 * np.pi * x)).max())
        assert np.log2(errors[0] / errors[1]) == pytest.approx(2.0, abs=0.05)

    def test_restrict_averages(self):
        fine = np.arange(8.0)
        assert np.array_equal(restrict(fine, 4), [1.5, 5.5])
        with pytest.raises(GridError):
            restrict(fine, 3)

    def test_cell_total_is_order_independent(self, rng):
        values = rng.normal(size=1000) * 10.0 ** rng.integers(-8, 8, size=1000)
        forward = cell_total(values, 0.1)
        backward = cell_total(values[::-1], 0.1)
        assert forward == backward


class TestFiniteVolume:
    def test_minmod(self):
        a = np.array([1.0, -1.0, 2.0, 0.0])
        b = np.array([2.0, 1.0, 0.5, 3.0])
        assert np.array_equal(fv.minmod(a, b), [1.0, 0.0, 0.5, 0.0])

    @pytest.mark.parametrize("reconstruction", ["first-order", "muscl"])
    def test_constant_state_is_stationary(self, reconstruction):
        U = np.tile([1.0, 2.0], (16, 1))
        div = fv.llf_divergence(U, np.zeros((16, 1)), lambda W, aux: W**2, np.ones(16), 0.1, reconstruction)
        assert np.array_equal(div, np.zeros_like(U))

    @pytest.mark.parametrize("reconstruction", ["first-order", "muscl"])
    def test_divergence_conserves(self, rng, reconstruction):
        U = rng.normal(size=(32, 3))
        div = fv.llf_divergence(U, np.zeros((32, 1)), lambda W, aux: 0.5 * W**2, np.abs(U).max(axis=-1), 1.0 / 32, reconstruction)
        assert np.abs(div.sum(axis=0)).max() <= 1e-11

    def test_advection_moves_right(self):
        n = 64
        x = SlabGrid(n).centers
        U = np.exp(-100 * (x - 0.5) ** 2)[:, None]
        div = fv.llf_divergence(U, np.zeros((n, 1)), lambda W, aux: W, np.ones(n), 1.0 / n)
        # upwind for unit speed: the rear of the pulse decays, the front grows
        assert div[n // 2 + 5, 0] > 0 > div[n // 2 - 5, 0]

    def test_unknown_reconstruction(self):
        with pytest.raises(ValueError):
            fv.reconstruct(np.zeros((8, 1)), "weno")

    def test_ssp_rk2_on_linear_decay(self):
        dt = 0.1
        out = fv.ssp_rk2(np.array([1.0]), lambda U: -U, dt)
        assert out[0] == pytest.approx(1.0 - dt + dt * dt / 2.0)
