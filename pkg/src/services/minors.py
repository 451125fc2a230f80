"""
Minors of the deformation gradient.

Phi(F) = (F, cof F, det F) flattened as a vector of length D:
F row-major, then cof F row-major (d=3 only), then det F.
D = 19 for d = 3 and D = 5 for d = 2, where the layout is (F, w).

All functions accept stacks of matrices with shape (..., d, d).
"""
from dataclasses import dataclass

import numpy as np

from src.services.errors import GridError, NonFiniteInputError

LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_i, _k, _j] = -1.0

# dPhi/dF: D x (d*d), columns indexed by j*d + beta
PhiJacobian = np.ndarray


def minors_size(dim: int) -> int:
    if dim == 3:
        return 19
    if dim == 2:
        return 5
    raise ValueError(f"dimension must be 2 or 3, got {dim}")


def _as_matrix(F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.ndim < 2 or F.shape[-1] != F.shape[-2] or F.shape[-1] not in (2, 3):
        raise ValueError(f"expected (..., d, d) with d in (2, 3), got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise NonFiniteInputError("deformation gradient contains non-finite entries")
    return F


@dataclass(frozen=True, eq=False)
class Minors:
    """Structured view of a (stack of) minors vector(s)."""

    flat: np.ndarray
    dim: int

    def __post_init__(self):
        if self.flat.shape[-1] != minors_size(self.dim):
            raise ValueError(f"flat vector of length {self.flat.shape[-1]} is not a d={self.dim} minors vector")

    @property
    def size(self) -> int:
        return self.flat.shape[-1]

    @property
    def f_part(self) -> np.ndarray:
        d = self.dim
        return self.flat[..., : d * d].reshape(self.flat.shape[:-1] + (d, d))

    @property
    def z_part(self) -> np.ndarray | None:
        if self.dim == 2:
            return None
        return self.flat[..., 9:18].reshape(self.flat.shape[:-1] + (3, 3))

    @property
    def w_part(self) -> np.ndarray:
        return self.flat[..., -1]

    @classmethod
    def from_flat(cls, flat, dim: int) -> "Minors":
        return cls(np.asarray(flat, dtype=float), dim)

    @classmethod
    def from_parts(cls, f_part, z_part, w_part) -> "Minors":
        f_part = np.asarray(f_part, dtype=float)
        d = f_part.shape[-1]
        lead = f_part.shape[:-2]
        blocks = [f_part.reshape(lead + (d * d,))]
        if d == 3:
            blocks.append(np.asarray(z_part, dtype=float).reshape(lead + (9,)))
        blocks.append(np.asarray(w_part, dtype=float).reshape(lead + (1,)))
        return cls(np.concatenate(blocks, axis=-1), d)


def as_flat(xi) -> np.ndarray:
    if isinstance(xi, Minors):
        return xi.flat
    return np.asarray(xi, dtype=float)


def determinant(F) -> np.ndarray:
    F = _as_matrix(F)
    if F.shape[-1] == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return np.einsum("...i,...i->...", F[..., 0, :], np.cross(F[..., 1, :], F[..., 2, :]))


def cofactor(F) -> np.ndarray:
    """cof F with F (cof F)^T = det F I."""
    F = _as_matrix(F)
    if F.shape[-1] == 2:
        cof = np.empty_like(F)
        cof[..., 0, 0] = F[..., 1, 1]
        cof[..., 0, 1] = -F[..., 1, 0]
        cof[..., 1, 0] = -F[..., 0, 1]
        cof[..., 1, 1] = F[..., 0, 0]
        return cof
    # row i of cof F is the cross product of the other two rows, cyclically
    return np.stack(
        [
            np.cross(F[..., 1, :], F[..., 2, :]),
            np.cross(F[..., 2, :], F[..., 0, :]),
            np.cross(F[..., 0, :], F[..., 1, :]),
        ],
        axis=-2,
    )


def phi(F) -> Minors:
    F = _as_matrix(F)
    d = F.shape[-1]
    cof = cofactor(F)
    det = np.einsum("...ia,...ia->...", cof, F) / d
    return Minors.from_parts(F, cof if d == 3 else None, det)


def dphi(F) -> PhiJacobian:
    """Exact Jacobian dPhi^A/dF_{j beta}, shape (..., D, d*d)."""
    F = _as_matrix(F)
    d = F.shape[-1]
    lead = F.shape[:-2]
    D = minors_size(d)
    jac = np.zeros(lead + (D, d * d))
    jac[..., : d * d, :] = np.eye(d * d)
    cof = cofactor(F)
    jac[..., -1, :] = cof.reshape(lead + (d * d,))
    if d == 3:
        # d(cof F)_{i a}/dF_{j b} = eps_{ijk} eps_{abc} F_{kc}
        dcof = np.einsum("ijk,abc,...kc->...iajb", LEVI_CIVITA, LEVI_CIVITA, F)
        jac[..., 9:18, :] = dcof.reshape(lead + (9, 9))
    return jac


def column_jacobian(F, alpha: int = 0) -> np.ndarray:
    """dPhi^A/dF_{i alpha} for a fixed column alpha, shape (..., D, d)."""
    jac = dphi(F)
    d = np.shape(F)[-1]
    return jac[..., [i * d + alpha for i in range(d)]]


def null_lagrangian_residual(motion, spacing: float, affine=None) -> float:
    """
    Max over (A, i) of the discrete divergence d_alpha(dPhi^A/dF_{i alpha}(grad y)).

    motion holds y-values on a periodic grid of nodes x = index * spacing, shape
    (N_1, ..., N_d, d). The motion is y = affine @ x + p(x) with p periodic; affine
    defaults to the identity. Derivatives are centered differences.
    """
    y = np.asarray(motion, dtype=float)
    d = y.shape[-1]
    if y.ndim != d + 1:
        raise ValueError(f"motion of shape {y.shape} is not a grid of {d}-vectors")
    if min(y.shape[:-1]) < 4:
        raise GridError(f"null-Lagrangian residual needs at least 4 cells per axis, got {y.shape[:-1]}")
    A = np.eye(d) if affine is None else np.asarray(affine, dtype=float)

    axes = [np.arange(n) * spacing for n in y.shape[:-1]]
    x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    periodic = y - x @ A.T

    F = np.empty(y.shape[:-1] + (d, d))
    for alpha in range(d):
        diff = (np.roll(periodic, -1, axis=alpha) - np.roll(periodic, 1, axis=alpha)) / (2.0 * spacing)
        F[..., :, alpha] = A[:, alpha] + diff

    jac = dphi(F).reshape(y.shape[:-1] + (minors_size(d), d, d))
    divergence = np.zeros(y.shape[:-1] + (minors_size(d), d))
    for alpha in range(d):
        column = jac[..., alpha]
        divergence += (np.roll(column, -1, axis=alpha) - np.roll(column, 1, axis=alpha)) / (2.0 * spacing)
    return float(np.max(np.abs(divergence)))
