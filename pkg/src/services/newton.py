"""
Batched damped Newton solver for gradient equations grad f(x) = p.
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.config import settings

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_BACKTRACK = 40


@dataclass
class NewtonResult:
    x: np.ndarray  # (n, k)
    residual: np.ndarray  # (n,) final residual norms
    iterations: int
    converged: np.ndarray  # (n,) bool

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else 0.0


def _solve(jac: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(jac, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("nij,nj->ni", np.linalg.pinv(jac), rhs)


def damped_newton(
    gradient: Callable[[np.ndarray], np.ndarray],
    hessian: Callable[[np.ndarray], np.ndarray],
    target: np.ndarray,
    x0: np.ndarray,
    tol: float | None = None,
    max_iter: int | None = None,
) -> NewtonResult:
    """
    Solve gradient(x) = target row by row, x and target of shape (n, k).

    Steps are backtracked (Armijo on the residual norm) per row; trial points with
    non-finite residual count as rejected. The tolerance is absolute for targets of
    unit size and relative beyond that.
    """
    tol = settings.NEWTON_TOL if tol is None else tol
    max_iter = settings.NEWTON_MAX_ITER if max_iter is None else max_iter

    target = np.asarray(target, dtype=float)
    x = np.array(np.broadcast_to(x0, target.shape), dtype=float)
    threshold = tol * np.maximum(1.0, np.linalg.norm(target, axis=-1))

    with np.errstate(all="ignore"):
        r = gradient(x) - target
    norm = np.linalg.norm(r, axis=-1)
    stalled = ~np.isfinite(norm)

    iterations = 0
    while iterations < max_iter:
        todo = np.flatnonzero((norm > threshold) & ~stalled)
        if todo.size == 0:
            break
        iterations += 1

        with np.errstate(all="ignore"):
            step = _solve(hessian(x[todo]), -r[todo])
        base, base_norm = x[todo], norm[todo]
        t = np.ones(todo.size)
        accepted = np.zeros(todo.size, dtype=bool)
        new_x, new_r, new_norm = base.copy(), r[todo].copy(), base_norm.copy()

        for _ in range(MAX_BACKTRACK):
            pending = np.flatnonzero(~accepted)
            if pending.size == 0:
                break
            trial = base[pending] + t[pending, None] * step[pending]
            with np.errstate(all="ignore"):
                trial_r = gradient(trial) - target[todo[pending]]
            trial_norm = np.linalg.norm(trial_r, axis=-1)
            ok = np.isfinite(trial_norm) & (trial_norm <= (1.0 - ARMIJO * t[pending]) * base_norm[pending])
            good = pending[ok]
            new_x[good], new_r[good], new_norm[good] = trial[ok], trial_r[ok], trial_norm[ok]
            accepted[good] = True
            t[pending[~ok]] *= 0.5

        stalled[todo[~accepted]] = True
        x[todo], r[todo], norm[todo] = new_x, new_r, new_norm

    converged = np.isfinite(norm) & (norm <= threshold)
    if not np.all(converged):
        logger.debug(f"Newton: {np.count_nonzero(~converged)} of {converged.size} rows unconverged")
    return NewtonResult(x=x, residual=norm, iterations=iterations, converged=converged)
