"""Zero-mean Neumann Poisson solves and the dual norm built on them.

The solution map z -> w with -lap(w) = z - <z>, <w> = 0 inverts the discrete
Laplacian on the mean-zero subspace.  It is computed either by conjugate
gradients with the mean projected out every iteration, or by a direct cosine
transform on uniform grids; the two paths are kept independent so they can
cross-check each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .grid import Field, Grid, grad_sq_norm, laplacian_array, mean


class EllipticSolveError(RuntimeError):
    """Poisson iteration failed to reach the requested residual."""

    def __init__(self, msg: str, residual_norm: float, iterations: int):
        super().__init__(msg)
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass
class PoissonSolution:
    """Zero-mean potential w with -lap(w) = z - <z>, plus solve metadata."""

    potential: Field
    residual_norm: float
    iterations: int


def dct_eigenvalues(grid: Grid) -> np.ndarray:
    """Eigenvalues of the reflected-ghost Laplacian in the DCT-II basis.

    Along each axis the basis vector cos(k*pi*(j+1/2)*h/L) is scaled by
    -(4/h^2) sin^2(k*pi/(2n)); the returned array holds the per-mode sums,
    shaped like a field.
    """
    lam = np.zeros(grid.shape)
    for ax in range(grid.dim):
        n = grid.cells[ax]
        h = grid.spacing[ax]
        k = np.arange(n)
        lam_ax = -(4.0 / (h * h)) * np.sin(math.pi * k / (2.0 * n)) ** 2
        shape = [1] * grid.dim
        shape[ax] = n
        lam = lam + lam_ax.reshape(shape)
    return lam


def _solve_transform(grid: Grid, b: np.ndarray) -> np.ndarray:
    lam = dct_eigenvalues(grid)
    bh = dctn(b, type=2, norm="ortho")
    wh = np.zeros_like(bh)
    nz = lam != 0.0
    wh[nz] = bh[nz] / (-lam[nz])
    # zero mode stays zero: this is exactly the <w> = 0 normalization
    return idctn(wh, type=2, norm="ortho")


def _solve_cg(grid: Grid, b: np.ndarray, tol_euclid: float, max_iter: int):
    spacing = grid.spacing
    x = np.zeros_like(b)
    iters = 0
    for _ in range(3):  # restart passes guard against recurrence drift
        r = b + laplacian_array(x, spacing)  # r = b - A x with A = -lap
        r -= r.mean()
        rs = float(np.dot(r.ravel(), r.ravel()))
        if math.sqrt(rs) <= tol_euclid:
            return x, iters
        p = r.copy()
        while iters < max_iter:
            ap = -laplacian_array(p, spacing)
            alpha = rs / float(np.dot(p.ravel(), ap.ravel()))
            x += alpha * p
            r -= alpha * ap
            # project the kernel (constants) out of iterate and residual
            x -= x.mean()
            r -= r.mean()
            iters += 1
            rs_new = float(np.dot(r.ravel(), r.ravel()))
            if math.sqrt(rs_new) <= tol_euclid:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        # verify against the true residual before accepting
        r_true = b + laplacian_array(x, spacing)
        r_true -= r_true.mean()
        if math.sqrt(float(np.dot(r_true.ravel(), r_true.ravel()))) <= tol_euclid:
            return x, iters
        if iters >= max_iter:
            break
    return x, iters


def solve_neumann_poisson(
    z: Field,
    tol: float = 1e-10,
    *,
    method: str = "cg",
    max_iter: int | None = None,
) -> PoissonSolution:
    """Solve -lap(w) = z - <z> with no-flux boundaries and <w> = 0.

    tol bounds the volume-weighted L2 norm of the residual
    lap(w) + (z - <z>).  method is "cg" (default) or "transform" (direct
    cosine-transform inversion on the uniform grid).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = z.grid
    b = z.values - z.values.mean()
    vol = grid.cell_volume
    tol_euclid = tol / math.sqrt(vol)
    if max_iter is None:
        max_iter = 10 * grid.n_cells

    if not np.any(b):
        return PoissonSolution(Field.zeros(grid), 0.0, 0)

    if method == "transform":
        x = _solve_transform(grid, b)
        iters = 0
    elif method == "cg":
        x, iters = _solve_cg(grid, b, tol_euclid, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")

    r = laplacian_array(x, grid.spacing) + b
    res = math.sqrt(float(np.dot(r.ravel(), r.ravel())) * vol)
    if res > tol:
        raise EllipticSolveError(
            f"poisson solve stalled at residual {res:.3e} (tol {tol:.3e}) "
            f"after {iters} iterations",
            residual_norm=res,
            iterations=iters,
        )
    return PoissonSolution(Field(grid, x), res, iters)


def h1_dual_norm(z: Field, tol: float = 1e-10, *, method: str = "cg") -> float:
    """Dual Sobolev norm |grad w|_2 + |<z>| with w the zero-mean Poisson potential.

    The sum (not a root of a sum of squares) is deliberate: downstream distance
    bounds are stated for exactly this norm.
    """
    sol = solve_neumann_poisson(z, tol, method=method)
    return math.sqrt(grad_sq_norm(sol.potential)) + abs(mean(z))
