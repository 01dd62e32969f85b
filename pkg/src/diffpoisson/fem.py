"""P1 finite elements for ``-div(kappa grad u) = f`` with ``u = 0`` on the boundary.

Fields (state, conductivity, source, targets) are plain float arrays of
nodal values, one entry per mesh vertex. The discrete residual is

    F(u, kappa, f) = R (A(kappa) u - M f)

where ``A`` is the full stiffness matrix, ``M`` the mass matrix and ``R``
restricts to interior vertices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .mesh import TriMesh
from .sparse import ConvergenceError, CsrMatrix, cg_solve

_MASS_LOCAL = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class NonPositiveConductivityError(ValueError):
    def __init__(self, triangle, mean_value):
        super().__init__(
            f"conductivity mean on triangle {triangle} is {mean_value:.6g}; must be positive"
        )
        self.triangle = triangle


@dataclass(frozen=True, eq=False)
class DirichletMap:
    """Maps between full nodal vectors and interior (free) entries."""

    interior: np.ndarray
    full_size: int

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> DirichletMap:
        interior = np.flatnonzero(~mesh.boundary)
        interior.setflags(write=False)
        return cls(interior, mesh.n_vertices)

    @property
    def n_interior(self) -> int:
        return self.interior.size

    def restrict(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.full_size,):
            raise ValueError(f"expected a full vector of length {self.full_size}, got {v.shape}")
        return v[self.interior]

    def prolong(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_interior,):
            raise ValueError(
                f"expected an interior vector of length {self.n_interior}, got {v.shape}"
            )
        out = np.zeros(self.full_size)
        out[self.interior] = v
        return out


def _local_to_global(mesh: TriMesh):
    rows = np.repeat(mesh.triangles, 3, axis=1)
    cols = np.tile(mesh.triangles, (1, 3))
    return rows.ravel(), cols.ravel()


def element_conductivity(mesh: TriMesh, kappa) -> np.ndarray:
    """Per-triangle mean of the nodal conductivity, checked for positivity."""
    kappa = _check_field(mesh, kappa, "kappa")
    kbar = kappa[mesh.triangles].mean(axis=1)
    bad = np.flatnonzero(~(kbar > 0.0))
    if bad.size:
        raise NonPositiveConductivityError(int(bad[0]), float(kbar[bad[0]]))
    return kbar


def assemble_stiffness(mesh: TriMesh, kappa, check_positive=True) -> CsrMatrix:
    """Full stiffness matrix ``(kappa grad phi_j, grad phi_i)``.

    ``kappa`` is a nodal P1 field; the element integral uses its mean, which
    is exact because the basis gradients are constant per triangle.
    """
    if check_positive:
        kbar = element_conductivity(mesh, kappa)
    else:
        kbar = _check_field(mesh, kappa, "kappa")[mesh.triangles].mean(axis=1)
    G = mesh.grad_basis
    local = np.einsum("tad,tbd->tab", G, G) * (mesh.areas * kbar)[:, None, None]
    rows, cols = _local_to_global(mesh)
    n = mesh.n_vertices
    return CsrMatrix.from_triplets(n, n, rows, cols, local.ravel())


def assemble_mass(mesh: TriMesh) -> CsrMatrix:
    local = mesh.areas[:, None, None] * _MASS_LOCAL
    rows, cols = _local_to_global(mesh)
    n = mesh.n_vertices
    return CsrMatrix.from_triplets(n, n, rows, cols, local.ravel())


def _check_field(mesh, values, name):
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise ValueError(
            f"{name} must have one value per vertex ({mesh.n_vertices}), got shape {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")
    return values


class PoissonProblem:
    """Discrete Poisson problem on a fixed mesh.

    Holds the mesh, the Dirichlet map and the coefficient-independent
    matrices (mass and unit stiffness) so they are assembled once.
    """

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.bc = DirichletMap.from_mesh(mesh)

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    @cached_property
    def mass(self) -> CsrMatrix:
        return assemble_mass(self.mesh)

    @cached_property
    def unit_stiffness(self) -> CsrMatrix:
        return assemble_stiffness(self.mesh, np.ones(self.mesh.n_vertices))

    def check_field(self, values, name="field"):
        return _check_field(self.mesh, values, name)

    # -- residual and Jacobian -------------------------------------------

    def jacobian(self, kappa) -> CsrMatrix:
        """Interior block of ``A(kappa)``, i.e. dF/du with boundary values eliminated."""
        A = assemble_stiffness(self.mesh, kappa)
        idx = self.bc.interior
        return A.submatrix(idx, idx)

    def residual(self, u, kappa, f):
        u = self.check_field(u, "u")
        f = self.check_field(f, "f")
        A = assemble_stiffness(self.mesh, kappa)
        return self.bc.restrict(A.matvec(u) - self.mass.matvec(f))

    def newton_solve(self, kappa, f, tol=1e-10, max_newton=10, lin_tol=1e-12):
        """Newton iteration on the residual; returns ``(u, dF/du)``.

        For this problem the residual is linear in ``u`` so one linear solve
        normally suffices.
        """
        f = self.check_field(f, "f")
        J = self.jacobian(kappa)
        u = np.zeros(self.n_vertices)
        r = self.residual(u, kappa, f)
        for _ in range(max_newton):
            if np.linalg.norm(r) <= tol:
                return u, J
            du = cg_solve(J, -r, rel_tol=lin_tol)
            u[self.bc.interior] += du
            r = self.residual(u, kappa, f)
        if np.linalg.norm(r) <= tol:
            return u, J
        raise ConvergenceError(
            f"Newton did not reach residual {tol:.1e} in {max_newton} steps",
            residual_norm=float(np.linalg.norm(r)),
        )

    def solve_forward(self, kappa, f, tol=1e-10):
        return self.newton_solve(kappa, f, tol=tol)[0]

    # -- parameter derivatives of the residual ---------------------------

    def _state_gradients(self, u):
        u = self.check_field(u, "u")
        return np.einsum("ta,tad->td", u[self.mesh.triangles], self.mesh.grad_basis)

    def dF_dkappa_action(self, u, delta_kappa):
        """``(dF/dkappa) delta_kappa`` restricted to the interior."""
        dk = self.check_field(delta_kappa, "delta_kappa")
        mesh = self.mesh
        grad_u = self._state_gradients(u)
        weight = mesh.areas * dk[mesh.triangles].mean(axis=1)
        local = weight[:, None] * np.einsum("td,tad->ta", grad_u, mesh.grad_basis)
        full = np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)
        return self.bc.restrict(full)

    def dF_dkappa_transpose_action(self, u, lam):
        """``(dF/dkappa)^T lam`` for an interior vector ``lam``; one entry per vertex."""
        mesh = self.mesh
        grad_u = self._state_gradients(u)
        grad_lam = self._state_gradients(self.bc.prolong(lam))
        per_tri = mesh.areas / 3.0 * np.einsum("td,td->t", grad_u, grad_lam)
        return np.bincount(
            mesh.triangles.ravel(), np.repeat(per_tri, 3), minlength=mesh.n_vertices
        )

    def dF_df_action(self, delta_f):
        return -self.bc.restrict(self.mass.matvec(self.check_field(delta_f, "delta_f")))

    def dF_df_transpose_action(self, lam):
        return -self.mass.matvec_transpose(self.bc.prolong(lam))

    # -- functionals -------------------------------------------------------

    def misfit_value(self, u, u_target):
        d = self.check_field(u, "u") - self.check_field(u_target, "u_target")
        return 0.5 * float(d @ self.mass.matvec(d))

    def misfit_grad_u(self, u, u_target):
        d = self.check_field(u, "u") - self.check_field(u_target, "u_target")
        return self.mass.matvec(d)

    def control_reg_value(self, f, gamma):
        f = self.check_field(f, "f")
        return 0.5 * gamma * float(f @ self.mass.matvec(f))

    def control_reg_grad(self, f, gamma):
        return gamma * self.mass.matvec(self.check_field(f, "f"))

    def kappa_reg_value(self, kappa, gamma):
        kappa = self.check_field(kappa, "kappa")
        return 0.5 * gamma * float(kappa @ self.unit_stiffness.matvec(kappa))

    def kappa_reg_grad(self, kappa, gamma):
        return gamma * self.unit_stiffness.matvec(self.check_field(kappa, "kappa"))

    def l2_norm(self, g):
        g = self.check_field(g, "g")
        return float(np.sqrt(max(g @ self.mass.matvec(g), 0.0)))

    def l2_error(self, g, h):
        return self.l2_norm(np.asarray(g, dtype=float) - np.asarray(h, dtype=float))


def write_field_csv(path, mesh: TriMesh, values, name="value"):
    """One row per vertex: index, x, y, value."""
    values = _check_field(mesh, values, name)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex", "x", "y", name])
        for i, ((x, y), v) in enumerate(zip(mesh.vertices, values)):
            writer.writerow([i, repr(float(x)), repr(float(y)), repr(float(v))])


def read_field_csv(path):
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[3]) for r in rows])
