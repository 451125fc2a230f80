import numpy as np
import pytest

from src.services.constitutive import (
    builtin_model,
    check_h0,
    check_h1,
    check_h2,
    fd_consistency,
    model_from_config,
    nonconvex_test_model,
    solve_sigma_gradient,
)
from src.services.errors import ModelParameterError, UnknownModelError
from src.services.minors import phi

from tests.conftest import make_config


class TestQuadratic:
    def test_hypotheses_hold(self, quadratic2):
        assert check_h0(quadratic2, n_samples=64).passed
        h1 = check_h1(quadratic2, n_samples=64)
        assert h1.passed
        assert h1.gamma_I_est == pytest.approx(4.0)
        assert h1.gamma_v_est == pytest.approx(0.5)
        h2 = check_h2(quadratic2, n_samples=64)
        assert h2.passed
        assert h2.M_est == pytest.approx(3.5)

    def test_reference_is_energy_minimum(self, quadratic3):
        c = phi(np.eye(3)).flat
        assert quadratic3.sigma_E.value(c) == 0.0
        assert np.array_equal(quadratic3.Sigma.gradient(c), np.zeros(19))

    def test_h1_unpacks(self, quadratic2):
        gamma_I, gamma_v, passed = check_h1(quadratic2, n_samples=16)
        assert passed and gamma_I > gamma_v

    def test_declared_override_breaks_h2(self):
        model = builtin_model("quadratic", {"gamma_E": 3.5, "gamma_v": 0.5}, dim=2, declared={"M": 1.0})
        assert not check_h2(model, n_samples=16).passed

    def test_inversion(self, quadratic2, rng):
        targets = rng.normal(size=(10, 5))
        result = solve_sigma_gradient(quadratic2, targets)
        assert result.all_converged
        expected = phi(np.eye(2)).flat + targets / 0.5
        assert np.allclose(result.x, expected, atol=1e-9)


class TestPolyquad:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_hypotheses_hold(self, dim):
        model = builtin_model("polyquad", {}, dim=dim)
        assert check_h0(model, n_samples=64).passed
        assert check_h1(model, n_samples=64).passed
        assert check_h2(model, n_samples=64).passed

    def test_fd_consistency(self, polyquad3):
        report = fd_consistency(polyquad3)
        for errors in report.values():
            assert errors["gradient"] <= 1e-5
            assert errors["hessian"] <= 1e-5

    def test_box_must_keep_determinant_positive(self):
        with pytest.raises(ModelParameterError):
            builtin_model("polyquad", {"w_half_width": 1.0})


class TestGasLagrangean:
    def test_default_box_passes(self, gas_model):
        assert check_h0(gas_model, n_samples=64).passed
        h1 = check_h1(gas_model, n_samples=64)
        assert h1.passed
        assert 1.664 <= h1.gamma_I_est <= 1.75
        assert 1.45 <= h1.gamma_v_est <= 1.5625
        assert gas_model.active == (4,)

    def test_wide_box_fails_h1(self):
        model = builtin_model("gas-lagrangean", {"w_min": 0.5, "w_max": 2.0})
        h1 = check_h1(model, n_samples=64)
        assert not h1.passed
        assert h1.gamma_I_est < 0.6
        assert h1.gamma_v_est > 3.0

    def test_fd_consistency(self, gas_model):
        report = fd_consistency(gas_model)
        assert report["sigma_I"]["gradient"] <= 1e-5
        assert report["sigma_E"]["hessian"] <= 1e-5


class TestFailures:
    def test_nonconvex_fails_h0(self):
        report = check_h0(nonconvex_test_model(), n_samples=32)
        assert not report.passed
        assert report.min_eigenvalue == pytest.approx(-0.5)

    def test_unknown_family(self):
        with pytest.raises(UnknownModelError):
            builtin_model("neo-hookean")

    @pytest.mark.parametrize(
        "params",
        [{"gamma_E": -1.0}, {"gamma_v": 0.0}, {"gamma_E": "stiff"}, {"unexpected": 1.0}, {"reference": "sphere"}],
    )
    def test_bad_parameters(self, params):
        with pytest.raises(ModelParameterError):
            builtin_model("quadratic", params)

    def test_bad_dimension(self):
        with pytest.raises(ModelParameterError):
            builtin_model("quadratic", {}, dim=4)


def test_model_from_config():
    config = make_config(model={"family": "polyquad", "dim": 3, "params": {"k": 0.25}, "gamma_v": 0.75})
    model = model_from_config(config.model)
    assert model.dim == 3
    assert model.gamma_v == 0.75
    assert model.params == {"k": 0.25}
