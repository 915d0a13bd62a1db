"""Uniform cell-centred tensor grids holding densities."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Piecewise constant field on a box of ``cells`` cells per axis.

    ``origin`` is the lower corner of the box and ``values`` are cell
    averages, stored with shape ``cells``.  Boundaries are no-flux.
    """

    origin: tuple
    cell_size: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", tuple(float(o) for o in np.atleast_1d(self.origin)))
        object.__setattr__(self, "cell_size", tuple(float(h) for h in np.atleast_1d(self.cell_size)))
        if v.ndim != len(self.origin) or len(self.cell_size) != v.ndim:
            raise ValueError("origin, cell_size and values must agree in dimension")
        if v.ndim not in (1, 2):
            raise ValueError("grids support d in {1, 2}")
        if min(self.cell_size) <= 0:
            raise ValueError("cell sizes must be positive")

    @classmethod
    def from_box(cls, low, high, cells, values=None):
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        cells = tuple(np.broadcast_to(np.atleast_1d(cells), low.shape).astype(int))
        h = (high - low) / np.asarray(cells)
        if values is None:
            values = np.zeros(cells)
        return cls(tuple(low), tuple(h), values)

    @property
    def d(self):
        return self.values.ndim

    @property
    def cells(self):
        return self.values.shape

    @property
    def cell_volume(self):
        return float(np.prod(self.cell_size))

    @property
    def low(self):
        return np.asarray(self.origin)

    @property
    def high(self):
        return self.low + np.asarray(self.cell_size) * np.asarray(self.cells)

    def axis_centers(self, a):
        return self.origin[a] + self.cell_size[a] * (np.arange(self.cells[a]) + 0.5)

    def centers(self):
        """Cell centres with shape ``cells + (d,)``."""
        axes = [self.axis_centers(a) for a in range(self.d)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def mass(self):
        return float(self.values.sum() * self.cell_volume)

    def with_values(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != self.cells:
            raise ValueError(f"values shape {values.shape} != grid cells {self.cells}")
        return DensityGrid(self.origin, self.cell_size, values)

    def integrate(self, f_values):
        return float(np.sum(f_values) * self.cell_volume)

    def l2_sq(self, other=None):
        """Squared L2 norm of the field, or of its difference with ``other``."""
        v = self.values if other is None else self.values - _values_of(other, self)
        return float(np.sum(v * v) * self.cell_volume)

    def same_layout(self, other, tol=1e-12):
        return (
            self.cells == other.cells
            and np.allclose(self.origin, other.origin, atol=tol, rtol=0)
            and np.allclose(self.cell_size, other.cell_size, atol=tol, rtol=0)
        )

    def __eq__(self, other):
        return isinstance(other, DensityGrid) and self.same_layout(other, 0) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"DensityGrid(origin={self.origin}, cell_size={self.cell_size}, cells={self.cells}, mass={self.mass:.6g})"


def _values_of(other, grid):
    if isinstance(other, DensityGrid):
        if not grid.same_layout(other):
            raise ValueError("grids have different layouts")
        return other.values
    return np.asarray(other, dtype=float)
