"""Structured triangulations of the unit square."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

_BOUNDARY_TOL = 1e-12


class DegenerateTriangleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh of the unit square.

    Parameters
    ----------
    vertices : ndarray, shape (n_vertices, 2)
        Vertex coordinates in [0, 1]^2.
    triangles : ndarray of int, shape (n_triangles, 3)
        Counter-clockwise vertex indices.
    boundary : ndarray of bool, shape (n_vertices,)
        True iff the vertex lies on the boundary of the square.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary"):
            getattr(self, name).setflags(write=False)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices
        ):
            raise ValueError("triangle references a vertex index out of range")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        return self._geometry[0]

    @cached_property
    def grad_basis(self) -> np.ndarray:
        """Constant P1 basis gradients, shape (n_triangles, 3, 2)."""
        return self._geometry[1]

    @cached_property
    def _geometry(self):
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (
            x[:, 2] - x[:, 0]
        ) * (y[:, 1] - y[:, 0])
        bad = np.flatnonzero(twice_area <= 0.0)
        if bad.size:
            raise DegenerateTriangleError(
                f"triangle {bad[0]} has non-positive signed area"
            )
        grads = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a, b = (k + 1) % 3, (k + 2) % 3
            grads[:, k, 0] = (y[:, a] - y[:, b]) / twice_area
            grads[:, k, 1] = (x[:, b] - x[:, a]) / twice_area
        areas = 0.5 * twice_area
        areas.setflags(write=False)
        grads.setflags(write=False)
        return areas, grads

    @property
    def x(self) -> np.ndarray:
        return self.vertices[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.vertices[:, 1]

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x, y)``."""
        return np.asarray(func(self.x, self.y), dtype=float) * np.ones(self.n_vertices)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "index", "a", "b", "c"])
            for i, ((x, y), flag) in enumerate(zip(self.vertices, self.boundary)):
                writer.writerow(["vertex", i, repr(float(x)), repr(float(y)), int(flag)])
            for t, (v0, v1, v2) in enumerate(self.triangles):
                writer.writerow(["triangle", t, int(v0), int(v1), int(v2)])


def build_unit_square_mesh(n: int) -> TriMesh:
    """Regular ``n x n`` grid with every cell split along its SW-NE diagonal.

    Vertices are numbered row-major, ``index = j * (n + 1) + i`` for the
    grid point ``(i / n, j / n)``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    x, y = vertices[:, 0], vertices[:, 1]
    boundary = (
        (np.abs(x) <= _BOUNDARY_TOL)
        | (np.abs(x - 1.0) <= _BOUNDARY_TOL)
        | (np.abs(y) <= _BOUNDARY_TOL)
        | (np.abs(y - 1.0) <= _BOUNDARY_TOL)
    )
    return TriMesh(vertices, triangles, boundary)


def triangle_geometry(mesh: TriMesh, t: int):
    """Area and the three basis-function gradients of triangle ``t``."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle index {t} out of range")
    return float(mesh.areas[t]), mesh.grad_basis[t].copy()
