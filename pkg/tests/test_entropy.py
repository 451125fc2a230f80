import numpy as np
import pytest

from src.services.constitutive import nonconvex_test_model
from src.services.entropy import (
    build_G,
    check_char,
    delta_lower_bound,
    dissipation,
    entropy_lower_constant,
    equilibrium_tau,
    hessian_psi_min_eig,
    invert_grad_sigma,
    psi,
)
from src.services.errors import NoConvergence
from src.services.minors import phi

GAMMA_V = 0.5


class TestQuadraticConjugate:
    def test_closed_form(self, quadratic2_structure, rng):
        c = phi(np.eye(2)).flat
        tau = rng.normal(size=(20, 5))
        expected = np.einsum("na,na->n", tau, tau) / (2 * GAMMA_V) - tau @ c
        assert np.abs(quadratic2_structure.G_value(tau) - expected).max() <= 1e-12
        assert np.abs(quadratic2_structure.G_grad(tau) - (tau / GAMMA_V - c)).max() <= 1e-12
        assert quadratic2_structure.normalization == pytest.approx(0.0, abs=1e-14)

    def test_hessian_of_G(self, quadratic2_structure, rng):
        tau = rng.normal(size=(3, 5))
        assert np.allclose(quadratic2_structure.G_hess(tau), np.eye(5) / GAMMA_V)

    def test_dissipation_closed_form(self, quadratic2_structure, quadratic2, rng):
        xi = phi(np.eye(2) + 0.2 * rng.normal(size=(30, 2, 2))).flat
        tau = rng.normal(size=(30, 5))
        residual = tau + quadratic2.Sigma.gradient(xi)
        expected = np.einsum("na,na->n", residual, residual) / GAMMA_V
        assert np.allclose(dissipation(quadratic2_structure, xi, tau), expected, rtol=1e-10, atol=1e-12)

    def test_hessian_eigenvalue(self, quadratic2_structure, rng):
        xi = phi(np.eye(2) + 0.1 * rng.normal(size=(5, 2, 2))).flat
        tau = 0.1 * rng.normal(size=(5, 5))
        eig = hessian_psi_min_eig(quadratic2_structure, xi, tau)
        assert np.abs(eig - (3.0 - np.sqrt(2.0))).max() <= 1e-10

    def test_psi_on_equilibrium_manifold(self, quadratic2_structure, quadratic2, rng):
        xi = phi(np.eye(2) + 0.2 * rng.normal(size=(10, 2, 2))).flat
        values = psi(quadratic2_structure, xi, equilibrium_tau(quadratic2, xi))
        assert np.abs(values - quadratic2.sigma_E.value(xi)).max() <= 1e-12


class TestPolyquadEntropy:
    def test_equilibrium_manifold(self, polyquad3_structure, polyquad3):
        xs = polyquad3.box.sample(64, seed=3)
        tau_eq = equilibrium_tau(polyquad3, xs)
        # d Psi / d tau = Xi + grad G(tau) vanishes on the manifold
        assert np.abs(xs + polyquad3_structure.G_grad(tau_eq, xs)).max() <= 1e-8
        values = psi(polyquad3_structure, xs, tau_eq)
        assert np.abs(values - polyquad3.sigma_E.value(xs)).max() <= 1e-8

    def test_psi_dominates_sigma_E(self, polyquad3_structure, polyquad3, rng):
        xs = polyquad3.box.sample(32, seed=4)
        tau = equilibrium_tau(polyquad3, xs) + 0.3 * rng.normal(size=xs.shape)
        assert np.all(psi(polyquad3_structure, xs, tau) >= polyquad3.sigma_E.value(xs) - 1e-10)

    def test_char(self, polyquad3_structure):
        report = check_char(polyquad3_structure, n_samples=64)
        assert report.passed
        assert report.dissipation_min >= 0.0
        assert report.G_min_eig > 0

    def test_char_quadratic(self, quadratic2_structure):
        assert check_char(quadratic2_structure, n_samples=64).passed

    def test_gas_char_notes_restriction(self, gas_model):
        report = check_char(build_G(gas_model), n_samples=32)
        assert report.passed
        assert report.notes == ["tau restricted to components [4]"]


class TestBounds:
    def test_delta_bound(self):
        assert delta_lower_bound(4.0, 0.5) == pytest.approx(3.0 - np.sqrt(2.0), abs=1e-12)
        assert delta_lower_bound(0.5, 4.0) == 0.0
        assert delta_lower_bound(1.0, 1.0) == 0.0

    def test_delta_bound_is_the_max_min(self):
        gamma_I, gamma_v = 2.0, 0.8
        deltas = np.linspace(gamma_v, gamma_I, 200_001)[1:-1]
        brute = np.max(np.minimum(gamma_I - deltas, 1.0 / gamma_v - 1.0 / deltas))
        assert delta_lower_bound(gamma_I, gamma_v) == pytest.approx(brute, abs=1e-5)

    def test_entropy_lower_constant(self):
        assert entropy_lower_constant(1.0, 0.5) == pytest.approx(0.5 * (1.5 - np.sqrt(5.0) / 2.0))
        assert entropy_lower_constant(100.0, 0.01) == 0.5


class TestStructure:
    def test_nonconvex_sigma_has_no_conjugate(self):
        with pytest.raises(NoConvergence):
            build_G(nonconvex_test_model())

    def test_conjugate_points_are_cached(self, quadratic2_structure):
        tau = np.array([0.1, 0.0, -0.2, 0.05, 0.3])
        first = quadratic2_structure.conjugate_point(tau)
        assert quadratic2_structure.conjugate_point(tau.copy()) is first
        assert not first.flags.writeable

    def test_to_dict(self, quadratic2_structure):
        data = quadratic2_structure.to_dict()
        assert set(data) == {"anchor", "normalization", "tau_box"}


class TestInversion:
    def test_quadratic_closed_form(self, quadratic2, rng):
        p = rng.normal(size=(8, 5))
        assert np.allclose(invert_grad_sigma(quadratic2, p), phi(np.eye(2)).flat + p / GAMMA_V, atol=1e-10)

    def test_round_trip(self, polyquad3):
        xs = polyquad3.box.sample(32, seed=5)
        recovered = invert_grad_sigma(polyquad3, polyquad3.Sigma.gradient(xs))
        assert np.abs(polyquad3.Sigma.gradient(recovered) - polyquad3.Sigma.gradient(xs)).max() <= 1e-9
        assert np.abs(recovered - xs).max() <= 1e-8
