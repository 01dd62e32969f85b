"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (a solver or
the optimizer did not converge). Reports are JSON with a
``schema_version`` field; fields are CSV files of ``vertex, x, y, value``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .fem import PoissonProblem, write_field_csv
from .mesh import build_unit_square_mesh
from .nn import N_PARAMS, init_params
from .sparse import ConvergenceError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bounds(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}") from None
    return (lo, hi)


def _common(p, param_choices=None, param_default=None):
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--mesh-n", type=int, help="subdivisions per side of the unit square")
    p.add_argument("--gamma", type=float, help="regularization weight")
    p.add_argument("--gtol", type=float, help="projected-gradient max-norm tolerance")
    p.add_argument("--max-iter", type=int, help="optimizer iteration limit")
    p.add_argument("--seed", type=int, help="random seed (noise and network initialization)")
    p.add_argument("--noise-std", type=float, help="measurement noise standard deviation")
    p.add_argument("--bounds", type=_bounds, help="box bounds lo,hi on the optimization variable")
    p.add_argument("--out", type=Path, help="output directory (created if absent)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key, e.g. --set source=10",
    )
    if param_choices:
        p.add_argument("--param", choices=param_choices, default=param_default,
                       help="which field is differentiated or optimized")


def build_parser():
    parser = _Parser(prog="diffpoisson", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="forward Poisson solve")
    _common(p)
    p.add_argument("--kappa", default="const:1",
                   help="conductivity: const:C or linear (1 + x + y)")
    p.add_argument("--f", default="manufactured",
                   help="source: const:C or manufactured (2 pi^2 sin(pi x) sin(pi y))")

    p = sub.add_parser("gradcheck", help="compare adjoint gradients with finite differences")
    _common(p, ["f", "kappa", "nn"], "kappa")
    p.add_argument("--coords", type=int, default=5,
                   help="number of random coordinates to check (all for nn)")
    p.add_argument("--tol", type=float, default=1e-5, help="pass threshold on relative error")

    p = sub.add_parser("convergence", help="manufactured-solution refinement study")
    _common(p)
    p.add_argument("--levels", default="8,16,32", help="comma-separated mesh sizes")

    p = sub.add_parser("optimal-control", help="bound-constrained source control")
    _common(p)

    p = sub.add_parser("invert", help="conductivity inversion from noisy data")
    _common(p, ["kappa", "nn"], "kappa")
    return parser


def _config(args, base: ex.ExperimentConfig) -> ex.ExperimentConfig:
    values = {}
    if args.config is not None:
        values.update(ex.read_config_file(args.config))
    flag_map = {
        "mesh_n": args.mesh_n,
        "gamma": args.gamma,
        "gtol": args.gtol,
        "max_iter": args.max_iter,
        "rng_seed": args.seed,
        "noise_std": args.noise_std,
        "bounds": args.bounds,
    }
    values.update({k: v for k, v in flag_map.items() if v is not None})
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = ex.parse_config_value(key, value)
    return base.replace(**values)


def _field(spec, mesh):
    kind, _, arg = spec.partition(":")
    if kind == "const":
        return np.full(mesh.n_vertices, float(arg))
    if kind == "linear":
        return 1.0 + mesh.x + mesh.y
    if kind == "manufactured":
        return 2.0 * np.pi**2 * np.sin(np.pi * mesh.x) * np.sin(np.pi * mesh.y)
    raise UsageError(f"unknown field spec {spec!r}")


def _out_dir(args, default):
    out = args.out if args.out is not None else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload):
    payload = {"schema_version": ex.SCHEMA_VERSION, **payload}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def cmd_solve(args):
    mesh_n = args.mesh_n or 16
    mesh = build_unit_square_mesh(mesh_n)
    problem = PoissonProblem(mesh)
    kappa = _field(args.kappa, mesh)
    f = _field(args.f, mesh)
    u = problem.solve_forward(kappa, f)
    out = _out_dir(args, "out/solve")
    write_field_csv(out / "u.csv", mesh, u, "u")
    report = {"command": "solve", "mesh_n": mesh_n, "u_l2_norm": problem.l2_norm(u)}
    if args.f == "manufactured" and np.allclose(kappa, 1.0):
        exact = np.sin(np.pi * mesh.x) * np.sin(np.pi * mesh.y)
        report["l2_error"] = problem.l2_error(u, exact)
        print(f"L2 error vs sin(pi x) sin(pi y): {report['l2_error']:.6e}")
    _write_json(out / "report.json", report)
    return 0


def cmd_gradcheck(args):
    config = _config(args, ex.ExperimentConfig(mesh_n=8))
    mesh = build_unit_square_mesh(config.mesh_n)
    problem = PoissonProblem(mesh)
    rng = np.random.default_rng(config.rng_seed)
    if args.param == "f":
        u_d = ex.desired_temperature(mesh, config.gamma)
        fun = ex.control_objective(problem, u_d, config.gamma)
        x = rng.uniform(0.0, 0.8, mesh.n_vertices)
    else:
        u_m, _, _ = ex.make_synthetic_measurement(
            problem, config.rng_seed, config.noise_std, config.source
        )
        f = np.full(mesh.n_vertices, config.source)
        if args.param == "kappa":
            fun = ex.inversion_objective_fem(problem, u_m, config.gamma, f)
            x = rng.uniform(0.5, 2.0, mesh.n_vertices)
        else:
            fun = ex.inversion_objective_nn(problem, u_m, config.gamma, f)
            x = init_params(config.rng_seed).flatten()
    if args.param == "nn":
        coords = list(range(N_PARAMS))
    else:
        coords = sorted(rng.choice(x.size, size=min(args.coords, x.size), replace=False).tolist())
    err, analytic, numeric = ex.finite_difference_check(fun, x, coords)
    print(f"max relative FD error ({args.param}, {len(coords)} coords): {err:.3e}")
    if args.out is not None:
        out = _out_dir(args, args.out)
        _write_json(out / "report.json", {
            "command": "gradcheck", "param": args.param, "mesh_n": config.mesh_n,
            "coords": coords, "max_relative_error": err,
            "analytic": analytic.tolist(), "numeric": numeric.tolist(),
        })
    return 0 if err <= args.tol else 2


def cmd_convergence(args):
    levels = tuple(int(v) for v in args.levels.split(","))
    if len(levels) < 2:
        raise UsageError("need at least two mesh levels")
    errors, rates = ex.manufactured_convergence(levels)
    for n, e in zip(levels, errors):
        print(f"n={n:4d}  L2 error {e:.6e}")
    for (a, b), r in zip(zip(levels, levels[1:]), rates):
        print(f"rate {a}->{b}: {r:.3f}")
    if args.out is not None:
        out = _out_dir(args, args.out)
        _write_json(out / "report.json", {
            "command": "convergence", "levels": list(levels),
            "errors": errors.tolist(), "rates": rates.tolist(),
        })
    return 0


def _finish(report, mesh_n, args, default_out):
    out = _out_dir(args, default_out)
    report.write(out, build_unit_square_mesh(mesh_n))
    summary = {
        k: v for k, v in report.to_dict().items() if k not in ("extra",)
    }
    print(json.dumps(summary, indent=2))
    return 0 if report.converged else 2


def cmd_optimal_control(args):
    config = _config(args, ex.ExperimentConfig.control_defaults())
    report = ex.run_optimal_control(config)
    return _finish(report, config.mesh_n, args, "out/optimal-control")


def cmd_invert(args):
    parameterization = "nn" if args.param == "nn" else "fem"
    config = _config(args, ex.ExperimentConfig.inversion_defaults(parameterization))
    report = ex.run_inversion(config)
    return _finish(report, config.mesh_n, args, f"out/invert-{parameterization}")


COMMANDS = {
    "solve": cmd_solve,
    "gradcheck": cmd_gradcheck,
    "convergence": cmd_convergence,
    "optimal-control": cmd_optimal_control,
    "invert": cmd_invert,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
