"""Discrete generator and Fokker-Planck adjoint on the grid.

The generator of the reversible diffusion is assembled in divergence
form, L f = (1 / 2 rho) div(rho Sigma grad f) with rho proportional to
exp(-Phi). Equivalence with the drift form b . grad f + (1/2) tr(Sigma
Hess f), b = div(Sigma)/2 - Sigma grad(Phi)/2, was checked symbolically
before coding; the divergence form is what keeps the discrete operator
conservative and self-adjoint.

Discretization: the trapezoid quadrature weights double as finite-volume
cell volumes (half cells at the boundary). The assembled stiffness
matrix K is symmetric with zero row sums, and

    G = -D(1/mu) K,          mu = w * rho,
    A = D(rho) G D(rho)^-1 = -D(1/w) K D(1/rho).

Consequences, exact up to float rounding: G 1 = 0, A rho = 0, w^T A = 0,
and D(mu) G is symmetric. The plain product D(rho) G is symmetric only
up to a boundary defect that scales with rho at the boundary, which is
why well-truncated domains matter.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import OperatorError
from .fields import ScalarField, TensorField
from .grid import Grid

# corner coupling pattern of one mixed-derivative cell, corner order
# (00, 10, 01, 11); scaled by a_cell / (2 h_k h_l) at assembly time
_CROSS_BLOCK = np.array([
    [1.0, 0.0, 0.0, -1.0],
    [0.0, -1.0, 1.0, 0.0],
    [0.0, 1.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0, 1.0],
])

EXPONENT_CLAMP = 700.0


@dataclass(frozen=True)
class GeneratorOperator:
    grid: Grid
    G: sp.csr_matrix = field(repr=False)
    K: sp.csr_matrix = field(repr=False)
    rho: ScalarField = field(repr=False)
    weights: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    Sigma: TensorField = field(repr=False)
    Phi: ScalarField = field(repr=False)
    has_cross: bool
    n_nonmonotone: int
    min_offdiagonal: float

    @property
    def matrix(self) -> sp.csr_matrix:
        return self.G

    @property
    def size(self) -> int:
        return self.grid.size

    def detailed_balance_defect(self) -> float:
        """max |D(rho)G - (D(rho)G)^T|; boundary-truncation indicator."""
        P = sp.diags(1.0 / self.weights) @ self.K
        d = P - P.T
        return float(np.abs(d.data).max()) if d.nnz else 0.0


@dataclass(frozen=True)
class AdjointOperator:
    grid: Grid
    A: sp.csr_matrix = field(repr=False)
    rho: ScalarField = field(repr=False)
    weights: np.ndarray = field(repr=False)
    generator: GeneratorOperator = field(repr=False)

    @property
    def matrix(self) -> sp.csr_matrix:
        return self.A


def stationary_weight(Phi: ScalarField, weights: np.ndarray) -> np.ndarray:
    """Normalized exp(-Phi): quadrature mass exactly one."""
    e = Phi.values - Phi.values.min()
    rho = np.exp(-np.minimum(e, EXPONENT_CLAMP))
    return rho / float(weights @ rho)


def assemble_generator(Sigma: TensorField, Phi: ScalarField,
                       grid: Grid | None = None) -> GeneratorOperator:
    g = Sigma.grid
    if Phi.grid != g or (grid is not None and grid != g):
        raise OperatorError("Sigma, Phi and grid must agree")
    Sigma.check_spd()

    n = g.dim
    shape = g.shape
    N = g.size
    w = g.quadrature_weights()
    rho = stationary_weight(Phi, w)
    log_rho = np.log(rho)
    mu = w * rho

    flat = np.arange(N).reshape(shape)
    axis_w = []  # per-axis trapezoid weight of each node, full arrays
    for k in range(n):
        aw = g.axis_weights(k)
        sh = [1] * n
        sh[k] = shape[k]
        axis_w.append(np.broadcast_to(aw.reshape(sh), shape).ravel())

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def emit(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    # axis faces: two-point flux with arithmetic-mean Sigma_kk and
    # geometric-mean rho, weighted by the transverse cell area
    for k in range(n):
        h = g.spacing[k]
        lo = tuple(slice(0, -1) if a == k else slice(None) for a in range(n))
        hi = tuple(slice(1, None) if a == k else slice(None) for a in range(n))
        i = flat[lo].ravel()
        j = flat[hi].ravel()
        rho_f = np.exp(0.5 * (log_rho[i] + log_rho[j]))
        skk = Sigma.values[:, k, k]
        sig_f = 0.5 * (skk[i] + skk[j])
        trans = w[i] / axis_w[k][i]
        c = rho_f * sig_f * trans / (2.0 * h)
        emit(i, i, c)
        emit(j, j, c)
        emit(i, j, -c)
        emit(j, i, -c)

    # mixed-derivative cells: symmetric corner stencil per 2D face of
    # the grid, one cell per (k, l) pair of adjacent node squares
    has_cross = False
    for k in range(n):
        for l in range(k + 1, n):
            if np.abs(Sigma.values[:, k, l]).max() == 0.0:
                continue
            has_cross = True
            hk, hl = g.spacing[k], g.spacing[l]

            def cell_slice(dk, dl):
                out = []
                for a in range(n):
                    if a == k:
                        out.append(slice(1, None) if dk else slice(0, -1))
                    elif a == l:
                        out.append(slice(1, None) if dl else slice(0, -1))
                    else:
                        out.append(slice(None))
                return tuple(out)

            corners = [flat[cell_slice(0, 0)].ravel(),
                       flat[cell_slice(1, 0)].ravel(),
                       flat[cell_slice(0, 1)].ravel(),
                       flat[cell_slice(1, 1)].ravel()]
            skl = Sigma.values[:, k, l]
            sig_c = 0.25 * sum(skl[c] for c in corners)
            rho_c = np.exp(0.25 * sum(log_rho[c] for c in corners))
            base = corners[0]
            trans = w[base] / (axis_w[k][base] * axis_w[l][base])
            a_cell = 0.5 * sig_c * rho_c * hk * hl * trans
            scale = 1.0 / (2.0 * hk * hl)
            for p in range(4):
                for q in range(4):
                    b = _CROSS_BLOCK[p, q]
                    if b != 0.0:
                        emit(corners[p], corners[q], (b * scale) * a_cell)

    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N)).tocsr()
    K.sum_duplicates()

    G = (sp.diags(-1.0 / mu) @ K).tocsr()

    coo = G.tocoo()
    off = coo.row != coo.col
    off_data = coo.data[off]
    if off_data.size:
        floor = -1e-14 * np.abs(G.data).max()
        n_bad = int(np.sum(off_data < floor))
        min_off = float(min(off_data.min(), 0.0))
    else:
        n_bad, min_off = 0, 0.0

    return GeneratorOperator(
        grid=g, G=G, K=K, rho=ScalarField(g, rho), weights=w, mu=mu,
        Sigma=Sigma, Phi=Phi, has_cross=has_cross,
        n_nonmonotone=n_bad, min_offdiagonal=min_off)


def adjoint_of(op: GeneratorOperator) -> AdjointOperator:
    """Fokker-Planck operator A = D(rho) G D(rho)^-1.

    Built as -D(1/w) K D(1/rho), which makes A rho = -D(1/w) K 1 and
    w^T A = -(K 1)^T D(1/rho): both vanish to rounding because K has
    zero row sums.
    """
    A = (sp.diags(-1.0 / op.weights) @ op.K @ sp.diags(1.0 / op.rho.values)).tocsr()
    return AdjointOperator(grid=op.grid, A=A, rho=op.rho,
                           weights=op.weights, generator=op)


def apply(op, f: ScalarField) -> ScalarField:
    if f.grid != op.grid:
        raise OperatorError("field grid does not match operator grid")
    return ScalarField(f.grid, op.matrix @ f.values)


def weighted_inner(f: ScalarField, g: ScalarField, rho: ScalarField) -> float:
    if f.grid != g.grid or f.grid != rho.grid:
        raise OperatorError("inner product requires a common grid")
    w = f.grid.quadrature_weights()
    return float(np.sum(w * rho.values * f.values * g.values))


def weighted_norm(f: ScalarField, rho: ScalarField) -> float:
    return float(np.sqrt(max(weighted_inner(f, f, rho), 0.0)))


def _sha256(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def dump_operator(op: GeneratorOperator, path: str) -> None:
    """COO text dump (row col value) with a JSON metadata sidecar."""
    coo = op.G.tocoo()
    with open(path, "w", encoding="ascii") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
    meta = {
        "nodes": op.grid.size,
        "nnz": int(op.G.nnz),
        "grid": {"lows": list(op.grid.lows), "highs": list(op.grid.highs),
                 "counts": list(op.grid.counts)},
        "phi_hash": _sha256(op.Phi.values),
        "sigma_hash": _sha256(op.Sigma.values),
        "has_cross_terms": op.has_cross,
        "nonmonotone_offdiagonals": op.n_nonmonotone,
        "min_offdiagonal": op.min_offdiagonal,
    }
    with open(path + ".meta.json", "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
