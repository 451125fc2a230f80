"""
Periodic slab grids and the cell-wise operations shared by the solvers.
"""
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from src.services.errors import GridError

MIN_CELLS = 8


@dataclass(frozen=True)
class SlabGrid:
    n_cells: int
    x_min: float = 0.0
    x_max: float = 1.0

    def __post_init__(self):
        if self.n_cells < MIN_CELLS:
            raise GridError(f"slab grid needs at least {MIN_CELLS} cells, got {self.n_cells}")
        if not self.x_max > self.x_min:
            raise GridError(f"empty slab [{self.x_min}, {self.x_max}]")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @cached_property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    def refined(self, factor: int) -> "SlabGrid":
        return SlabGrid(self.n_cells * factor, self.x_min, self.x_max)

    def require_same(self, other: "SlabGrid"):
        if self != other:
            raise GridError(f"grid mismatch: {self} vs {other}")

    @classmethod
    def from_config(cls, table) -> "SlabGrid":
        return cls(table.n_cells, table.x_min, table.x_max)


def centered_difference(field: np.ndarray, dx: float) -> np.ndarray:
    """Periodic (u[j+1] - u[j-1]) / (2 dx) along the cell axis 0."""
    return (np.roll(field, -1, axis=0) - np.roll(field, 1, axis=0)) / (2.0 * dx)


def spectral_derivative(field: np.ndarray, length: float) -> np.ndarray:
    """Derivative of periodic samples along axis 0 by FFT; the Nyquist mode is dropped."""
    field = np.asarray(field, dtype=float)
    n = field.shape[0]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=length / n)
    if n % 2 == 0:
        k[-1] = 0.0
    shape = (k.size,) + (1,) * (field.ndim - 1)
    return np.fft.irfft(1j * k.reshape(shape) * np.fft.rfft(field, axis=0), n=n, axis=0)


def restrict(field: np.ndarray, factor: int) -> np.ndarray:
    """Cell averages of a fine field onto a grid `factor` times coarser."""
    field = np.asarray(field)
    n = field.shape[0]
    if n % factor:
        raise GridError(f"cannot restrict {n} cells by a factor {factor}")
    return field.reshape((n // factor, factor) + field.shape[1:]).mean(axis=1)


def cell_total(values: np.ndarray, dx: float, deterministic: bool = True) -> float:
    """dx-weighted sum over cells; fsum gives an order-independent correctly rounded total."""
    values = np.asarray(values, dtype=float).ravel()
    if deterministic:
        return math.fsum(values.tolist()) * dx
    return float(np.sum(values)) * dx
