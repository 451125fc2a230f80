import numpy as np

from src.services.newton import damped_newton


def _cubic_gradient(x):
    return x**3 + x


def _cubic_hessian(x):
    n, k = x.shape
    H = np.zeros((n, k, k))
    H[:, np.arange(k), np.arange(k)] = 3.0 * x**2 + 1.0
    return H


class TestDampedNewton:
    def test_solves_each_row(self, rng):
        targets = rng.uniform(-20.0, 20.0, size=(50, 3))
        result = damped_newton(_cubic_gradient, _cubic_hessian, targets, np.zeros(3), tol=1e-12)
        assert result.all_converged
        assert np.abs(_cubic_gradient(result.x) - targets).max() <= 1e-10
        assert result.max_residual <= 1e-12 * np.linalg.norm(targets, axis=-1).max()

    def test_exact_start_takes_no_iterations(self):
        x0 = np.array([[0.5, -1.0]])
        result = damped_newton(_cubic_gradient, _cubic_hessian, _cubic_gradient(x0), x0)
        assert result.iterations == 0
        assert np.array_equal(result.x, x0)

    def test_unreachable_target_is_reported_per_row(self):
        def gradient(x):
            return np.arctan(x)

        def hessian(x):
            return (1.0 / (1.0 + x**2))[..., None]

        targets = np.array([[0.5], [2.0]])
        result = damped_newton(gradient, hessian, targets, np.zeros(1), max_iter=30)
        assert result.converged.tolist() == [True, False]
        assert not result.all_converged
        assert abs(result.x[0, 0] - np.tan(0.5)) <= 1e-9
