"""
Local Lax-Friedrichs finite volumes on periodic grids, with optional minmod-MUSCL
reconstruction and SSP-RK2 time stepping.

Fields are stored cell-major: shape (n_cells, ...). Interface j+1/2 sits between
cells j and j+1.
"""
from typing import Callable

import numpy as np

FluxFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def reconstruct(U: np.ndarray, reconstruction: str = "first-order") -> tuple[np.ndarray, np.ndarray]:
    """Left and right traces (U_L, U_R) at interfaces j+1/2."""
    right_neighbour = np.roll(U, -1, axis=0)
    if reconstruction == "first-order":
        return U, right_neighbour
    if reconstruction != "muscl":
        raise ValueError(f"unknown reconstruction '{reconstruction}'")
    slope = minmod(U - np.roll(U, 1, axis=0), right_neighbour - U)
    left = U + 0.5 * slope
    right = right_neighbour - 0.5 * np.roll(slope, -1, axis=0)
    return left, right


def llf_divergence(
    U: np.ndarray,
    aux: np.ndarray,
    flux_fn: FluxFn,
    cell_speeds: np.ndarray,
    dx: float,
    reconstruction: str = "first-order",
) -> np.ndarray:
    """
    -(F_{j+1/2} - F_{j-1/2}) / dx with the local Lax-Friedrichs numerical flux.

    aux holds frozen per-cell data the flux depends on (not reconstructed);
    cell_speeds bound the characteristic speeds cell by cell.
    """
    U_L, U_R = reconstruct(U, reconstruction)
    aux_R = np.roll(aux, -1, axis=0)
    speed = np.maximum(cell_speeds, np.roll(cell_speeds, -1))
    speed = speed.reshape((-1,) + (1,) * (U.ndim - 1))
    flux = 0.5 * (flux_fn(U_L, aux) + flux_fn(U_R, aux_R)) - 0.5 * speed * (U_R - U_L)
    return -(flux - np.roll(flux, 1, axis=0)) / dx


def ssp_rk2(U: np.ndarray, rhs: Callable[[np.ndarray], np.ndarray], dt: float) -> np.ndarray:
    """Heun's method, the two-stage strong-stability-preserving Runge-Kutta scheme."""
    stage = U + dt * rhs(U)
    return 0.5 * (U + stage + dt * rhs(stage))
