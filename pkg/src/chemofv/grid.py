"""Uniform cell-centered grids, scalar fields, and discrete calculus.

All spatial operators enforce no-flux (homogeneous Neumann) boundaries by
reflecting ghost cells, which is the same thing as zeroing the boundary face
flux.  Written in flux form so that global conservation and summation by
parts hold to round-off, not just to truncation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    """Invalid grid or field construction."""


@dataclass(frozen=True)
class Grid:
    """Uniform lattice of cell averages over an interval or a rectangle.

    extent[k] is the side length of the domain along axis k and cells[k] the
    number of cells, so spacing[k] = extent[k] / cells[k].
    """

    dim: int
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        if len(self.extent) != self.dim or len(self.cells) != self.dim:
            raise GridError("extent and cells must have one entry per axis")
        if any(e <= 0 for e in self.extent):
            raise GridError(f"extent must be positive, got {self.extent}")
        if any(n < 1 for n in self.cells):
            raise GridError(f"cells must be >= 1, got {self.cells}")

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extent, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def axis_centers(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def center_mesh(self) -> list[np.ndarray]:
        """Cell-center coordinate arrays, each shaped like a field."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        if self.dim == 1:
            return axes
        return list(np.meshgrid(*axes, indexing="ij"))


@dataclass(eq=False)
class Field:
    """Scalar cell-average data bound to a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.grid.shape:
            if vals.size == self.grid.n_cells:
                vals = vals.reshape(self.grid.shape)
            else:
                raise GridError(
                    f"field has {vals.size} values for a grid of {self.grid.n_cells} cells"
                )
        self.values = vals

    @classmethod
    def full(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


# ---------------------------------------------------------------------------
# array-level kernels (shared with the time stepper, which works on raw arrays)
# ---------------------------------------------------------------------------


def _axis_flux_div(values: np.ndarray, out: np.ndarray, inv_h2: float) -> None:
    # divided differences of face fluxes along axis 0, zero boundary flux
    d = values[1:] - values[:-1]
    out[0] += d[0] * inv_h2
    if values.shape[0] > 2:
        out[1:-1] += (d[1:] - d[:-1]) * inv_h2
    out[-1] -= d[-1] * inv_h2


def laplacian_array(values: np.ndarray, spacing: tuple[float, ...]) -> np.ndarray:
    """Second-order Laplacian with reflected ghost cells, in flux form.

    Computed as divided differences of face fluxes with zero flux on boundary
    faces, so the volume-weighted sum of the output telescopes to zero.
    """
    out = np.zeros_like(values)
    if values.shape[0] >= 2:
        _axis_flux_div(values, out, 1.0 / (spacing[0] * spacing[0]))
    if values.ndim == 2 and values.shape[1] >= 2:
        # operate on transposed views; writes propagate to out
        _axis_flux_div(values.T, out.T, 1.0 / (spacing[1] * spacing[1]))
    return out


def grad_sq_array(values: np.ndarray, spacing: tuple[float, ...], cell_volume: float) -> float:
    """Squared gradient seminorm over interior faces.

    Consistent with laplacian_array through summation by parts:
    grad_sq = -sum(vol * f * lap(f)) exactly (up to round-off).
    """
    total = 0.0
    if values.shape[0] >= 2:
        d = values[1:] - values[:-1]
        total += float(np.sum(d * d)) * cell_volume / (spacing[0] * spacing[0])
    if values.ndim == 2 and values.shape[1] >= 2:
        d = values[:, 1:] - values[:, :-1]
        total += float(np.sum(d * d)) * cell_volume / (spacing[1] * spacing[1])
    return total


# ---------------------------------------------------------------------------
# field-level operations
# ---------------------------------------------------------------------------


def laplacian_neumann(f: Field) -> Field:
    """Discrete Laplacian with no-flux boundaries; output integrates to zero."""
    return Field(f.grid, laplacian_array(f.values, f.grid.spacing))


def integrate(f: Field) -> float:
    """Volume-weighted sum of cell averages (the discrete integral)."""
    return float(f.values.sum()) * f.grid.cell_volume


def mean(f: Field) -> float:
    """Domain average integrate(f) / |domain|."""
    return integrate(f) / f.grid.volume


def lp_norm(f: Field, p: float) -> float:
    """Discrete L^p norm with midpoint quadrature; p = inf gives max |f|."""
    if p == math.inf:
        return float(np.max(np.abs(f.values))) if f.values.size else 0.0
    p = float(p)
    if p < 1.0:
        raise ValueError(f"lp_norm requires p >= 1, got {p}")
    a = np.abs(f.values)
    if p == 1.0:
        return float(a.sum()) * f.grid.cell_volume
    if p == 2.0:
        return math.sqrt(float((a * a).sum()) * f.grid.cell_volume)
    return (float((a**p).sum()) * f.grid.cell_volume) ** (1.0 / p)


def grad_sq_norm(f: Field) -> float:
    """Squared H^1 seminorm; equals -integrate(f * laplacian_neumann(f))."""
    return grad_sq_array(f.values, f.grid.spacing, f.grid.cell_volume)


def neumann_mode(grid: Grid, mode: int) -> Field:
    """Product of per-axis cosines cos(mode*pi*x/L): a discrete Neumann eigenmode.

    mode = 0 gives the constant field 1.
    """
    if mode < 0:
        raise ValueError("mode must be >= 0")
    vals = np.ones(grid.shape)
    mesh = grid.center_mesh()
    for ax in range(grid.dim):
        vals = vals * np.cos(mode * math.pi * mesh[ax] / grid.extent[ax])
    return Field(grid, vals)


def neumann_mode_eigenvalue(grid: Grid, mode: int) -> float:
    """Eigenvalue of the discrete Laplacian on neumann_mode(grid, mode).

    Per axis the stencil scales the mode by -(4/h^2) sin^2(mode*pi*h / (2L));
    the 2D product mode picks up the sum over axes.
    """
    lam = 0.0
    for ax in range(grid.dim):
        h = grid.spacing[ax]
        lam -= (4.0 / (h * h)) * math.sin(mode * math.pi * h / (2.0 * grid.extent[ax])) ** 2
    return lam


def cosine_field(grid: Grid, mean_value: float, amplitude: float, mode: int) -> Field:
    """mean + amplitude * (product of per-axis cosines of the given mode)."""
    base = neumann_mode(grid, mode)
    return Field(grid, mean_value + amplitude * base.values)


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

_SNAPSHOT_MAGIC = "# dim,extent,cells"


def write_snapshot(f: Field, path) -> None:
    """Write a field as CSV: grid header, then one row per cell with coordinates.

    Values use 17 significant digits so doubles round-trip exactly.
    """
    g = f.grid
    extent = ";".join(f"{e:.17g}" for e in g.extent)
    cells = ";".join(str(n) for n in g.cells)
    coord_names = ["x", "y"][: g.dim]
    mesh = [m.ravel() for m in g.center_mesh()]
    flat = f.values.ravel()
    with open(path, "w") as fh:
        fh.write(_SNAPSHOT_MAGIC + "\n")
        fh.write(f"# {g.dim},{extent},{cells}\n")
        fh.write("index," + ",".join(coord_names) + ",value\n")
        for i in range(flat.size):
            coords = ",".join(f"{m[i]:.17g}" for m in mesh)
            fh.write(f"{i},{coords},{flat[i]:.17g}\n")


def read_snapshot(path) -> Field:
    """Read a field written by write_snapshot."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3 or lines[0].strip() != _SNAPSHOT_MAGIC:
        raise GridError(f"{path}: not a field snapshot (missing '{_SNAPSHOT_MAGIC}' header)")
    meta = lines[1].lstrip("# ").split(",")
    if len(meta) != 3:
        raise GridError(f"{path}: malformed snapshot header line 2")
    dim = int(meta[0])
    extent = tuple(float(x) for x in meta[1].split(";"))
    cells = tuple(int(x) for x in meta[2].split(";"))
    grid = Grid(dim, extent, cells)
    values = np.empty(grid.n_cells)
    rows = lines[3:]
    if len(rows) != grid.n_cells:
        raise GridError(f"{path}: expected {grid.n_cells} rows, found {len(rows)}")
    for row in rows:
        parts = row.split(",")
        values[int(parts[0])] = float(parts[-1])
    return Field(grid, values.reshape(grid.shape))
