"""Differentiable P1 finite elements for the Poisson equation.

The forward solve is exposed as a primitive with tangent-linear (JVP) and
adjoint (VJP) rules so it composes with a small reverse-mode tape, a
coordinate MLP and a bound-constrained L-BFGS minimizer.
"""

from .mesh import TriMesh, build_unit_square_mesh, triangle_geometry
from .sparse import CsrMatrix, ConvergenceError, cg_solve, count_solves
from .fem import DirichletMap, PoissonProblem, NonPositiveConductivityError
from .diff_solve import PdeParameter, SolveRecord, forward, jvp, vjp
from .tape import Tape, Node
from .lbfgsb import Bounds, OptimResult, minimize

__all__ = [
    "TriMesh",
    "build_unit_square_mesh",
    "triangle_geometry",
    "CsrMatrix",
    "ConvergenceError",
    "cg_solve",
    "count_solves",
    "DirichletMap",
    "PoissonProblem",
    "NonPositiveConductivityError",
    "PdeParameter",
    "SolveRecord",
    "forward",
    "jvp",
    "vjp",
    "Tape",
    "Node",
    "Bounds",
    "OptimResult",
    "minimize",
]

__version__ = "0.1.0"
