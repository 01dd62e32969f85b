"""The Poisson solve as a differentiable map ``m -> u(m)``.

``u(m)`` is defined implicitly by ``F(u, m) = 0``. Its derivatives never
differentiate through the solver iterations: a Jacobian-vector product
solves the tangent-linear system

    dF/du  udot = -(dF/dm) v

and a vector-Jacobian product solves the adjoint system

    (dF/du)^T lam = w,   returning  -(dF/dm)^T lam.

Both reuse the Jacobian assembled at the converged state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .fem import PoissonProblem
from .sparse import CsrMatrix, cg_solve

DERIVATIVE_TOL = 1e-12


class ParameterKind(str, enum.Enum):
    SOURCE = "f"
    CONDUCTIVITY = "kappa"


@dataclass(frozen=True, eq=False)
class PdeParameter:
    """The field being differentiated, plus the other field held fixed.

    For ``kind=SOURCE`` ``values`` is ``f`` and ``context`` is ``kappa``;
    for ``kind=CONDUCTIVITY`` it is the other way round.
    """

    kind: ParameterKind
    values: np.ndarray
    context: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", ParameterKind(self.kind))

    @classmethod
    def source(cls, f, kappa):
        return cls(ParameterKind.SOURCE, np.asarray(f, float), np.asarray(kappa, float))

    @classmethod
    def conductivity(cls, kappa, f):
        return cls(ParameterKind.CONDUCTIVITY, np.asarray(kappa, float), np.asarray(f, float))

    @property
    def kappa(self):
        return self.values if self.kind is ParameterKind.CONDUCTIVITY else self.context

    @property
    def f(self):
        return self.values if self.kind is ParameterKind.SOURCE else self.context

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class SolveRecord:
    parameter: PdeParameter
    u: np.ndarray
    jacobian: CsrMatrix
    problem: PoissonProblem
    tol: float
    residual_norm: float


def forward(problem: PoissonProblem, param: PdeParameter, tol=1e-10) -> SolveRecord:
    u, J = problem.newton_solve(param.kappa, param.f, tol=tol)
    u.setflags(write=False)
    res = float(np.linalg.norm(problem.residual(u, param.kappa, param.f)))
    return SolveRecord(param, u, J, problem, tol, res)


def _dF_dm_action(rec: SolveRecord, v):
    if rec.parameter.kind is ParameterKind.CONDUCTIVITY:
        return rec.problem.dF_dkappa_action(rec.u, v)
    return rec.problem.dF_df_action(v)


def _dF_dm_transpose_action(rec: SolveRecord, lam):
    if rec.parameter.kind is ParameterKind.CONDUCTIVITY:
        return rec.problem.dF_dkappa_transpose_action(rec.u, lam)
    return rec.problem.dF_df_transpose_action(lam)


def jvp(rec: SolveRecord, v, lin_tol=DERIVATIVE_TOL):
    """Tangent ``du/dm v`` as a full nodal vector (zero on the boundary)."""
    v = np.asarray(v, dtype=float)
    if v.shape != rec.parameter.values.shape:
        raise ValueError(f"tangent has shape {v.shape}, expected {rec.parameter.values.shape}")
    rhs = -_dF_dm_action(rec, v)
    udot = cg_solve(rec.jacobian, rhs, rel_tol=lin_tol)
    return rec.problem.bc.prolong(udot)


def vjp(rec: SolveRecord, w, lin_tol=DERIVATIVE_TOL):
    """Parameter cotangent ``(du/dm)^T w``.

    ``w`` may be given on all vertices or on the interior only; boundary
    entries of a full-length ``w`` do not contribute since ``u`` is pinned
    there.
    """
    bc = rec.problem.bc
    w = np.asarray(w, dtype=float)
    if w.shape == (bc.full_size,):
        w = bc.restrict(w)
    elif w.shape != (bc.n_interior,):
        raise ValueError(
            f"cotangent has shape {w.shape}, expected ({bc.full_size},) or ({bc.n_interior},)"
        )
    lam = cg_solve(rec.jacobian, w, rel_tol=lin_tol, transpose=True)
    return -_dF_dm_transpose_action(rec, lam)


def functional_gradient_adjoint(rec: SolveRecord, dJ_du, dJ_dm):
    """Reduced gradient ``dJ/dm`` via one adjoint solve."""
    return vjp(rec, dJ_du) + np.asarray(dJ_dm, dtype=float)


def functional_gradient_tlm(rec: SolveRecord, dJ_du, dJ_dm):
    """Reduced gradient ``dJ/dm`` via one tangent-linear solve per parameter."""
    dJ_du = np.asarray(dJ_du, dtype=float)
    grad = np.array(dJ_dm, dtype=float, copy=True)
    e = np.zeros(rec.parameter.size)
    for k in range(rec.parameter.size):
        e[k] = 1.0
        grad[k] += dJ_du @ jvp(rec, e)
        e[k] = 0.0
    return grad
