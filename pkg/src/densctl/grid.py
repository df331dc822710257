"""Uniform tensor-product grids on axis-aligned boxes.

Nodes are enumerated in row-major (C) order over the per-axis index arrays.
Boundary nodes own half cells, so the trapezoid quadrature weights coincide
with the finite-volume cell volumes used by the operator assembly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    lows: tuple[float, ...]
    highs: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lows) == len(self.highs) == len(self.counts)):
            raise ValueError("lows, highs, counts must have equal length")
        if len(self.counts) == 0:
            raise ValueError("grid needs at least one axis")
        for lo, hi, c in zip(self.lows, self.highs, self.counts):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid axis range [{lo}, {hi}]")
            if int(c) < 3:
                raise ValueError("each axis needs at least 3 nodes")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "lows", tuple(float(v) for v in self.lows))
        object.__setattr__(self, "highs", tuple(float(v) for v in self.highs))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (c - 1)
                     for lo, hi, c in zip(self.lows, self.highs, self.counts))

    def axis(self, k: int) -> np.ndarray:
        return np.linspace(self.lows[k], self.highs[k], self.counts[k])

    def axes(self) -> list[np.ndarray]:
        return [self.axis(k) for k in range(self.dim)]

    def node_coords(self) -> np.ndarray:
        """All node coordinates, shape (size, dim), row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def axis_weights(self, k: int) -> np.ndarray:
        """Trapezoid weights along one axis: h inside, h/2 at the two ends."""
        h = self.spacing[k]
        w = np.full(self.counts[k], h)
        w[0] = w[-1] = h / 2
        return w

    def quadrature_weights(self) -> np.ndarray:
        """Tensor-product trapezoid weights, shape (size,).

        These equal the volumes of the node-centered cells (half width at
        the boundary), so sums against them are both the quadrature and the
        finite-volume mass.
        """
        w = self.axis_weights(0)
        full = w
        for k in range(1, self.dim):
            full = np.multiply.outer(full, self.axis_weights(k))
        return full.ravel()

    def boundary_shell_index(self) -> np.ndarray:
        """Per node, the grid-index distance to the nearest boundary face.

        Shell 0 is the boundary itself; larger values are deeper inside.
        Shape (size,), computed as the minimum over axes of the distance to
        either end of that axis.
        """
        dist = None
        for k in range(self.dim):
            idx = np.arange(self.counts[k])
            d = np.minimum(idx, self.counts[k] - 1 - idx)
            shape = [1] * self.dim
            shape[k] = self.counts[k]
            d = d.reshape(shape)
            dist = d if dist is None else np.minimum(dist, d)
        return np.broadcast_to(dist, self.shape).ravel().copy()

    def interior_mask(self, margin: int = 1) -> np.ndarray:
        """Boolean mask of nodes at least `margin` indices from every face."""
        return self.boundary_shell_index() >= margin

    def refined(self) -> "Grid":
        """Same box with halved spacing (counts 2c - 1)."""
        return Grid(self.lows, self.highs, tuple(2 * c - 1 for c in self.counts))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.ones(pts.shape[0], dtype=bool)
        for k in range(self.dim):
            ok &= (pts[:, k] >= self.lows[k]) & (pts[:, k] <= self.highs[k])
        return ok
