import numpy as np
import pytest

from src.services.errors import GridError, NonFiniteInputError
from src.services.minors import (
    Minors,
    column_jacobian,
    cofactor,
    determinant,
    dphi,
    minors_size,
    null_lagrangian_residual,
    phi,
)


class TestMinors:
    def test_sizes(self):
        assert minors_size(2) == 5
        assert minors_size(3) == 19
        with pytest.raises(ValueError):
            minors_size(4)

    def test_identity(self):
        assert np.array_equal(phi(np.eye(2)).flat, [1.0, 0.0, 0.0, 1.0, 1.0])
        xi = phi(np.eye(3))
        assert xi.size == 19
        assert np.array_equal(xi.z_part, np.eye(3))
        assert xi.w_part == 1.0

    def test_cofactor_identity(self, rng):
        F = rng.normal(size=(10_000, 3, 3))
        lhs = np.einsum("nia,nja->nij", F, cofactor(F))
        det = determinant(F)
        scale = np.maximum(1.0, np.abs(F).max(axis=(1, 2)) ** 3)
        error = np.abs(lhs - det[:, None, None] * np.eye(3)).max(axis=(1, 2)) / scale
        assert error.max() <= 1e-12

    def test_determinant_from_cofactor(self, rng):
        F = rng.normal(size=(10_000, 3, 3))
        det = determinant(F)
        via_cof = np.einsum("nia,nia->n", cofactor(F), F) / 3.0
        scale = np.maximum(1.0, np.abs(F).max(axis=(1, 2)) ** 3)
        assert (np.abs(det - via_cof) / scale).max() <= 1e-12
        assert np.allclose(det, np.linalg.det(F), atol=1e-10)

    def test_two_dimensional_cofactor(self):
        F = np.array([[2.0, 1.0], [0.5, 3.0]])
        assert np.array_equal(cofactor(F), [[3.0, -0.5], [-1.0, 2.0]])
        assert determinant(F) == pytest.approx(5.5)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_dphi_matches_central_differences(self, rng, dim):
        F = np.eye(dim) + 0.3 * rng.normal(size=(20, dim, dim))
        jac = dphi(F)
        h = 1e-6
        for j in range(dim):
            for beta in range(dim):
                E = np.zeros((dim, dim))
                E[j, beta] = h
                fd = (phi(F + E).flat - phi(F - E).flat) / (2 * h)
                assert np.abs(fd - jac[:, :, j * dim + beta]).max() <= 1e-6

    def test_column_jacobian_selects_column(self, rng):
        F = np.eye(3) + 0.1 * rng.normal(size=(5, 3, 3))
        block = column_jacobian(F, alpha=1)
        assert block.shape == (5, 19, 3)
        assert np.array_equal(block[..., 2], dphi(F)[..., 2 * 3 + 1])

    def test_round_trip_parts(self, rng):
        F = rng.normal(size=(4, 3, 3))
        xi = phi(F)
        again = Minors.from_parts(xi.f_part, xi.z_part, xi.w_part)
        assert np.array_equal(again.flat, xi.flat)
        assert np.array_equal(Minors.from_flat(xi.flat, 3).f_part, F)

    def test_non_finite_input(self):
        F = np.eye(3)
        F[0, 0] = np.nan
        with pytest.raises(NonFiniteInputError):
            phi(F)
        with pytest.raises(ValueError):
            determinant(np.ones((2, 3)))


def _motion(n: int) -> np.ndarray:
    x = np.arange(n) / n
    X1, X2, X3 = np.meshgrid(x, x, x, indexing="ij")
    two_pi = 2.0 * np.pi
    a = 0.05
    return np.stack(
        [
            X1 + a * np.sin(two_pi * X2) * np.sin(two_pi * X3),
            X2 + a * np.sin(two_pi * X3) * np.sin(two_pi * X1),
            X3 + a * np.sin(two_pi * X1) * np.sin(two_pi * X2),
        ],
        axis=-1,
    )


class TestNullLagrangian:
    def test_second_order_decay(self):
        sizes = [16, 32, 64]
        residuals = [null_lagrangian_residual(_motion(n), 1.0 / n) for n in sizes]
        assert residuals[0] > residuals[1] > residuals[2] > 0
        order = np.log2(residuals[-2] / residuals[-1])
        assert order >= 1.9

    def test_two_dimensional_residual_is_round_off(self):
        n = 32
        x = np.arange(n) / n
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        y = np.stack([X1 + 0.1 * np.sin(2 * np.pi * X2), X2 + 0.1 * np.cos(2 * np.pi * (X1 + X2))], axis=-1)
        assert null_lagrangian_residual(y, 1.0 / n) <= 1e-10

    def test_affine_part(self):
        n = 16
        A = np.array([[1.2, 0.1], [0.0, 0.9]])
        x = np.arange(n) / n
        X = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
        assert null_lagrangian_residual(X @ A.T, 1.0 / n, affine=A) <= 1e-12

    def test_too_small_grid(self):
        with pytest.raises(GridError):
            null_lagrangian_residual(np.zeros((3, 3, 2)), 0.3)
