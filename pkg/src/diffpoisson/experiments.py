"""End-to-end PDE-constrained optimization runs.

Two problems are provided:

* optimal control of the source ``f`` towards a desired temperature,
  with box bounds on ``f``;
* recovery of the conductivity ``kappa`` from noisy temperature data,
  parameterized either nodally ("fem") or by a coordinate MLP ("nn").

Each run builds its objective on a fresh :class:`~diffpoisson.tape.Tape`
per evaluation and hands value and gradient to :func:`lbfgsb.minimize`.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tape as ad
from .fem import NonPositiveConductivityError, PoissonProblem, write_field_csv
from .lbfgsb import Bounds, minimize
from .mesh import TriMesh, build_unit_square_mesh
from .nn import N_PARAMS, MlpParams, evaluate, init_params, nn_kappa
from .sparse import ConvergenceError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FEM_KAPPA_LOWER = 1e-3


@dataclass
class ExperimentConfig:
    mesh_n: int = 16
    gamma: float = 1e-6
    bounds: tuple[float, float] | None = None
    gtol: float = 1e-9
    max_iter: int = 2000
    noise_std: float | None = None
    rng_seed: int = 2
    parameterization: str = "fem"
    source: float = 10.0
    memory: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.mesh_n) != self.mesh_n or self.mesh_n < 2:
            raise ValueError(f"mesh_n must be an integer >= 2, got {self.mesh_n}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.noise_std is not None and self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.parameterization not in ("fem", "nn"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.gtol <= 0 or self.max_iter < 0:
            raise ValueError("gtol must be positive and max_iter non-negative")
        if self.bounds is not None:
            lo, hi = self.bounds
            if lo > hi:
                raise ValueError("bounds must satisfy lower <= upper")

    @classmethod
    def control_defaults(cls, **overrides):
        base = dict(mesh_n=32, gamma=1e-6, bounds=(0.0, 0.8), gtol=1e-10, max_iter=200)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def inversion_defaults(cls, parameterization="fem", **overrides):
        return cls(parameterization=parameterization, **overrides)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def parse_config_value(key, text):
    """Convert a textual config value to the type of ``ExperimentConfig.key``."""
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    if key not in names:
        raise KeyError(f"unknown config key {key!r}")
    text = text.strip()
    if key == "bounds":
        if text.lower() in ("", "none"):
            return None
        lo, hi = (float(v) for v in text.split(","))
        return (lo, hi)
    if key == "noise_std" and text.lower() in ("", "none"):
        return None
    if key in ("mesh_n", "max_iter", "rng_seed", "memory"):
        return int(text)
    if key == "parameterization":
        return text.lower()
    return float(text)


def read_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment, dashes map to underscores."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = parse_config_value(key, value)
    return values


@dataclass
class ExperimentReport:
    experiment: str
    parameterization: str
    iterations: int
    final_objective: float
    state_error: float
    parameter_count: int
    wall_time: float
    converged: bool
    message: str
    pg_norm: float
    n_evals: int
    kappa_error: float | None = None
    extra: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        out = dataclasses.asdict(self)
        del out["fields"]
        out["schema_version"] = SCHEMA_VERSION
        return out

    def write(self, out_dir, mesh: TriMesh):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        for name, values in self.fields.items():
            write_field_csv(out_dir / f"{name}.csv", mesh, values, name)


def safe_objective(fun):
    """Turn solver failures at a trial point into an infinite objective."""

    def wrapped(x):
        try:
            return fun(x)
        except (NonPositiveConductivityError, ConvergenceError, FloatingPointError) as exc:
            logger.debug("objective evaluation failed: %s", exc)
            return np.inf, None

    return wrapped


# -- optimal control ---------------------------------------------------------


def desired_temperature(mesh: TriMesh, gamma) -> np.ndarray:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    scale = 1.0 / (2.0 * np.pi**2) / (1.0 + 4.0 * gamma * np.pi**4)
    return scale * np.sin(np.pi * mesh.x) * np.sin(np.pi * mesh.y)


def clipped_control_candidate(mesh: TriMesh, gamma, upper=0.8) -> np.ndarray:
    """Analytic unconstrained optimum ``sin(pi x) sin(pi y) / (1 + 4 gamma pi^4)`` clipped."""
    s = np.sin(np.pi * mesh.x) * np.sin(np.pi * mesh.y)
    return np.minimum(upper, s / (1.0 + 4.0 * gamma * np.pi**4))


def misfit_node(problem: PoissonProblem, u: ad.Node, target) -> ad.Node:
    return ad.scalar_functional(
        u,
        lambda v: problem.misfit_value(v, target),
        lambda v: problem.misfit_grad_u(v, target),
    )


def control_objective(problem: PoissonProblem, u_target, gamma, kappa=None):
    """``f -> (J(f), dJ/df)`` with ``J = 1/2 |u - u_d|^2 + gamma/2 |f|^2`` (L2 norms)."""
    if kappa is None:
        kappa = np.ones(problem.n_vertices)

    def fun(f_values):
        tape = ad.Tape()
        f = tape.input(f_values)
        u = ad.pde_solve_node(f, "f", problem, kappa)
        reg = ad.scalar_functional(
            f,
            lambda v: problem.control_reg_value(v, gamma),
            lambda v: problem.control_reg_grad(v, gamma),
        )
        J = misfit_node(problem, u, u_target) + reg
        return float(J.value), tape.backward(J)[f.id]

    return fun


def run_optimal_control(config: ExperimentConfig | None = None) -> ExperimentReport:
    config = config or ExperimentConfig.control_defaults()
    t0 = time.perf_counter()
    mesh = build_unit_square_mesh(config.mesh_n)
    problem = PoissonProblem(mesh)
    kappa = np.ones(mesh.n_vertices)
    u_d = desired_temperature(mesh, config.gamma)
    lo, hi = config.bounds if config.bounds is not None else (-np.inf, np.inf)
    bounds = Bounds.uniform(mesh.n_vertices, lo, hi)

    fun = control_objective(problem, u_d, config.gamma, kappa)
    result = minimize(
        fun,
        np.zeros(mesh.n_vertices),
        bounds,
        gtol=config.gtol,
        max_iter=config.max_iter,
        memory=config.memory,
    )
    f_opt = result.x
    u_opt = problem.solve_forward(kappa, f_opt)
    candidate = bounds.project(clipped_control_candidate(mesh, config.gamma, upper=hi))
    return ExperimentReport(
        experiment="optimal-control",
        parameterization="fem",
        iterations=result.iterations,
        final_objective=result.fun,
        state_error=problem.l2_error(u_opt, u_d),
        parameter_count=mesh.n_vertices,
        wall_time=time.perf_counter() - t0,
        converged=result.converged,
        message=result.message,
        pg_norm=result.pg_norm,
        n_evals=result.n_evals,
        extra={
            "candidate_objective": fun(candidate)[0],
            "gamma": config.gamma,
            "mesh_n": config.mesh_n,
            "objective_history": result.history,
        },
        fields={"f_opt": f_opt, "u_opt": u_opt, "u_desired": u_d},
    )


# -- coefficient inversion ---------------------------------------------------


def true_conductivity(mesh: TriMesh) -> np.ndarray:
    return 1.0 + mesh.x + mesh.y


def make_synthetic_measurement(problem: PoissonProblem, rng_seed=2, noise_std=None, source=10.0):
    """Noisy temperature data for ``kappa = 1 + x + y`` and a constant source.

    Returns ``(u_m, kappa_true, u_true)``. ``noise_std=None`` selects
    ``1e-3 * max|u_true|``; noise is added at interior vertices only.
    """
    mesh = problem.mesh
    kappa_true = true_conductivity(mesh)
    f = np.full(mesh.n_vertices, float(source))
    u_true = problem.solve_forward(kappa_true, f)
    if noise_std is None:
        noise_std = 1e-3 * np.abs(u_true).max()
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    u_m = u_true.copy()
    if noise_std > 0:
        rng = np.random.default_rng(rng_seed)
        u_m[problem.bc.interior] += rng.normal(0.0, noise_std, problem.bc.n_interior)
    return u_m, kappa_true, u_true


def _inversion_terms(problem, tape_kappa, u, u_m, gamma):
    reg = ad.scalar_functional(
        tape_kappa,
        lambda v: problem.kappa_reg_value(v, gamma),
        lambda v: problem.kappa_reg_grad(v, gamma),
    )
    return misfit_node(problem, u, u_m) + reg


def inversion_objective_fem(problem: PoissonProblem, u_m, gamma, f):
    """``kappa -> (J, dJ/dkappa)`` with ``J = 1/2 |u - u_m|^2 + gamma/2 |grad kappa|^2``."""

    def fun(kappa_values):
        tape = ad.Tape()
        kappa = tape.input(kappa_values)
        u = ad.pde_solve_node(kappa, "kappa", problem, f)
        J = _inversion_terms(problem, kappa, u, u_m, gamma)
        return float(J.value), tape.backward(J)[kappa.id]

    return fun


def inversion_objective_nn(problem: PoissonProblem, u_m, gamma, f):
    """Same functional as the FEM variant, as a function of the flat MLP weights."""

    def fun(theta_values):
        tape = ad.Tape()
        theta = tape.input(theta_values)
        kappa = nn_kappa(theta, problem.mesh)
        u = ad.pde_solve_node(kappa, "kappa", problem, f)
        J = _inversion_terms(problem, kappa, u, u_m, gamma)
        return float(J.value), tape.backward(J)[theta.id]

    return fun


def run_inversion(config: ExperimentConfig | None = None) -> ExperimentReport:
    config = config or ExperimentConfig.inversion_defaults()
    t0 = time.perf_counter()
    mesh = build_unit_square_mesh(config.mesh_n)
    problem = PoissonProblem(mesh)
    u_m, kappa_true, u_true = make_synthetic_measurement(
        problem, config.rng_seed, config.noise_std, config.source
    )
    f = np.full(mesh.n_vertices, config.source)

    if config.parameterization == "fem":
        fun = inversion_objective_fem(problem, u_m, config.gamma, f)
        lo, hi = config.bounds if config.bounds is not None else (FEM_KAPPA_LOWER, np.inf)
        bounds = Bounds.uniform(mesh.n_vertices, lo, hi)
        x0 = np.ones(mesh.n_vertices)
    else:
        fun = inversion_objective_nn(problem, u_m, config.gamma, f)
        lo, hi = config.bounds if config.bounds is not None else (-np.inf, np.inf)
        bounds = Bounds.uniform(N_PARAMS, lo, hi)
        x0 = init_params(config.rng_seed).flatten()

    result = minimize(
        safe_objective(fun),
        x0,
        bounds,
        gtol=config.gtol,
        max_iter=config.max_iter,
        memory=config.memory,
    )
    if config.parameterization == "fem":
        kappa_opt = result.x
    else:
        kappa_opt = evaluate(MlpParams.unflatten(result.x), mesh.vertices)
    u_opt = problem.solve_forward(kappa_opt, f)

    report = ExperimentReport(
        experiment="inversion",
        parameterization=config.parameterization,
        iterations=result.iterations,
        final_objective=result.fun,
        state_error=problem.l2_error(u_opt, u_true),
        kappa_error=problem.l2_error(kappa_opt, kappa_true),
        parameter_count=int(result.x.size),
        wall_time=time.perf_counter() - t0,
        converged=result.converged,
        message=result.message,
        pg_norm=result.pg_norm,
        n_evals=result.n_evals,
        extra={
            "gamma": config.gamma,
            "mesh_n": config.mesh_n,
            "rng_seed": config.rng_seed,
            "source": config.source,
            "state_norm": problem.l2_norm(u_true),
            "objective_history": result.history,
        },
        fields={
            "kappa_opt": kappa_opt,
            "u_opt": u_opt,
            "u_measured": u_m,
            "kappa_true": kappa_true,
            "u_true": u_true,
        },
    )
    if config.parameterization == "nn":
        report.extra["theta"] = result.x.tolist()
    return report


def run_inversion_fem(config: ExperimentConfig | None = None) -> ExperimentReport:
    config = (config or ExperimentConfig()).replace(parameterization="fem")
    return run_inversion(config)


def run_inversion_nn(config: ExperimentConfig | None = None) -> ExperimentReport:
    config = (config or ExperimentConfig()).replace(parameterization="nn")
    return run_inversion(config)


# -- verification helpers ----------------------------------------------------


def finite_difference_check(fun, x, coords, rel_step=1e-6):
    """Compare ``fun``'s gradient to central differences on ``coords``.

    The step for coordinate ``k`` is ``rel_step * max(1, |x_k|)``. Returns
    ``(max_relative_error, analytic, numeric)``; the relative error of each
    coordinate is measured against ``max(|numeric|, max|gradient| * 1e-3)``
    so near-zero components do not dominate.
    """
    x = np.asarray(x, dtype=float)
    _, grad = fun(x)
    analytic = np.array([grad[k] for k in coords])
    numeric = np.empty(len(coords))
    for i, k in enumerate(coords):
        h = rel_step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        numeric[i] = (fun(xp)[0] - fun(xm)[0]) / (2.0 * h)
    floor = 1e-3 * np.abs(grad).max()
    denom = np.maximum(np.abs(numeric), floor)
    denom[denom == 0.0] = 1.0
    return float(np.max(np.abs(analytic - numeric) / denom)), analytic, numeric


def manufactured_convergence(ns=(8, 16, 32)):
    """L2 errors for ``u = sin(pi x) sin(pi y)``, ``kappa = 1`` and the observed rates."""
    errors = []
    for n in ns:
        mesh = build_unit_square_mesh(n)
        problem = PoissonProblem(mesh)
        exact = np.sin(np.pi * mesh.x) * np.sin(np.pi * mesh.y)
        u = problem.solve_forward(np.ones(mesh.n_vertices), 2.0 * np.pi**2 * exact)
        errors.append(problem.l2_error(u, exact))
    errors = np.array(errors)
    hs = 1.0 / np.asarray(ns, dtype=float)
    rates = np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])
    return errors, rates
