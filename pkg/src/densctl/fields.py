"""Scalar, vector and tensor fields sampled on grid nodes.

Fields hold flat arrays aligned with the row-major node enumeration of
their grid. Numerical derivatives live here: second-order central
differences inside, second-order one-sided stencils at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DensctlError
from .expressions import Expr, evaluate
from .grid import Grid

SPD_TOLERANCE = 1e-8
SYMMETRY_TOLERANCE = 1e-12


class FieldError(DensctlError):
    pass


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.size,):
            raise FieldError(f"scalar field shape {v.shape} != ({self.grid.size},)")
        object.__setattr__(self, "values", v)

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    values: np.ndarray = field(repr=False)  # (size, dim)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.size, self.grid.dim):
            raise FieldError(
                f"vector field shape {v.shape} != ({self.grid.size}, {self.grid.dim})")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class TensorField:
    grid: Grid
    values: np.ndarray = field(repr=False)  # (size, dim, dim)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.dim
        if v.shape != (self.grid.size, n, n):
            raise FieldError(
                f"tensor field shape {v.shape} != ({self.grid.size}, {n}, {n})")
        object.__setattr__(self, "values", v)

    def symmetry_defect(self) -> float:
        return float(np.abs(self.values - np.swapaxes(self.values, 1, 2)).max())

    def min_eigenvalue(self) -> float:
        sym = 0.5 * (self.values + np.swapaxes(self.values, 1, 2))
        return float(np.linalg.eigvalsh(sym)[:, 0].min())

    def check_spd(self, eps: float = SPD_TOLERANCE) -> None:
        d = self.symmetry_defect()
        if d > SYMMETRY_TOLERANCE:
            raise FieldError(f"tensor field asymmetric, defect {d:.3e}")
        m = self.min_eigenvalue()
        if m < eps:
            raise FieldError(
                f"tensor field not uniformly positive definite, min eigenvalue {m:.3e}")

    def component(self, i: int, j: int) -> np.ndarray:
        return self.values[:, i, j]


def _check_finite(values: np.ndarray, grid: Grid, what: str) -> None:
    bad = ~np.isfinite(np.asarray(values).reshape(grid.size, -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        coords = grid.node_coords()[i]
        raise FieldError(f"{what} is nonfinite at node {i}, x = {coords.tolist()}")


def eval_scalar_field(expr: Expr, grid: Grid) -> ScalarField:
    """Evaluate an expression on all grid nodes; nonfinite values are errors."""
    vals = evaluate(expr, grid.node_coords())
    _check_finite(vals, grid, "expression")
    return ScalarField(grid, vals)


def eval_matrix(exprs: list[list[Expr]], points: np.ndarray) -> np.ndarray:
    """Evaluate a matrix of expressions at points (m, dim) -> (m, r, c)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    r = len(exprs)
    c = len(exprs[0])
    out = np.empty((points.shape[0], r, c))
    for i in range(r):
        if len(exprs[i]) != c:
            raise FieldError("ragged matrix of expressions")
        for j in range(c):
            out[:, i, j] = evaluate(exprs[i][j], points)
    return out


def eval_tensor_field(exprs: list[list[Expr]], grid: Grid) -> TensorField:
    vals = eval_matrix(exprs, grid.node_coords())
    if vals.shape[1] != grid.dim or vals.shape[2] != grid.dim:
        raise FieldError(
            f"diffusion tensor must be {grid.dim} x {grid.dim}, got "
            f"{vals.shape[1]} x {vals.shape[2]}")
    _check_finite(vals, grid, "diffusion tensor")
    return TensorField(grid, vals)


def noise_to_tensor(sigma_vals: np.ndarray) -> np.ndarray:
    """Sigma = sigma sigma^T pointwise, sigma of shape (m, n, p)."""
    return np.einsum("kip,kjp->kij", sigma_vals, sigma_vals)


# ---------------------------------------------------------------------------
# numerical derivatives on the grid

def gradient_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Gradient of nodal values, shape (size, dim). O(h^2) everywhere."""
    arr = np.asarray(values, dtype=float).reshape(grid.shape)
    out = np.empty((grid.size, grid.dim))
    for k in range(grid.dim):
        g = np.gradient(arr, grid.spacing[k], axis=k, edge_order=2)
        out[:, k] = g.ravel()
    return out


def gradient_field(f: ScalarField) -> VectorField:
    return VectorField(f.grid, gradient_values(f.grid, f.values))


def second_derivative_values(grid: Grid, values: np.ndarray, axis: int) -> np.ndarray:
    """Pure second derivative along one axis, O(h^2) including the ends."""
    arr = np.asarray(values, dtype=float).reshape(grid.shape)
    h = grid.spacing[axis]
    a = np.moveaxis(arr, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / h**2
    out[0] = (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / h**2
    out[-1] = (2 * a[-1] - 5 * a[-2] + 4 * a[-3] - a[-4]) / h**2
    return np.moveaxis(out, 0, axis).ravel()


def laplacian_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.size)
    for k in range(grid.dim):
        out += second_derivative_values(grid, values, k)
    return out


def mixed_second_derivative_values(grid: Grid, values: np.ndarray,
                                   k: int, l: int) -> np.ndarray:
    """d^2 f / dx_k dx_l via composed first derivatives."""
    g = gradient_values(grid, values)[:, k]
    return gradient_values(grid, g)[:, l]


def interpolate_values(grid: Grid, values: np.ndarray,
                       points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of nodal values at arbitrary points.

    values is (N,) or (N, c) in flat node order; points (P, n) are
    clamped to the box before interpolation. Returns (P,) or (P, c).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(values, dtype=float)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    n = grid.dim
    lows = np.asarray(grid.lows)
    strides = np.ones(n, dtype=np.int64)
    for k in range(n - 2, -1, -1):
        strides[k] = strides[k + 1] * grid.counts[k + 1]

    t = (points - lows) / np.asarray(grid.spacing)
    i0 = np.clip(np.floor(t).astype(np.int64), 0,
                 np.asarray(grid.counts) - 2)
    frac = np.clip(t - i0, 0.0, 1.0)

    out = np.zeros((points.shape[0], vals.shape[1]))
    for corner in range(1 << n):
        offs = np.array([(corner >> k) & 1 for k in range(n)], dtype=np.int64)
        flat = (i0 + offs) @ strides
        weight = np.prod(np.where(offs == 1, frac, 1.0 - frac), axis=1)
        out += weight[:, None] * vals[flat]
    return out[:, 0] if squeeze else out


def tensor_divergence_values(grid: Grid, tensor: np.ndarray) -> np.ndarray:
    """Row-wise divergence (div M)_i = sum_k d M_ik / dx_k, shape (size, dim)."""
    n = grid.dim
    out = np.zeros((grid.size, n))
    for i in range(n):
        for k in range(n):
            col = tensor[:, i, k].reshape(grid.shape)
            out[:, i] += np.gradient(col, grid.spacing[k], axis=k,
                                     edge_order=2).ravel()
    return out
