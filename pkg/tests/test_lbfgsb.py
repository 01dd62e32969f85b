import numpy as np
import pytest

from diffpoisson.lbfgsb import Bounds, minimize


def quadratic(A, b):
    return lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b)


def rosenbrock(x):
    value = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    grad = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    return value, grad


def feasibility_recorder(bounds):
    seen = []

    def cb(x, f):
        seen.append(bounds.contains(x))

    return seen, cb


def test_bound_active_quadratic_exact():
    bounds = Bounds.uniform(1, 0.0, 1.0)
    r = minimize(lambda x: ((x[0] - 2) ** 2, 2 * (x - 2)), [0.0], bounds)
    assert r.x[0] == 1.0
    assert r.pg_norm == 0.0
    assert r.converged


def test_unbounded_quadratic():
    r = minimize(lambda x: (x[0] ** 2, 2 * x), [3.0], gtol=1e-10)
    assert abs(r.x[0]) <= 1e-8


def test_rosenbrock():
    r = minimize(rosenbrock, [-1.2, 1.0], gtol=1e-8, max_iter=100)
    assert r.converged and r.iterations <= 100
    np.testing.assert_allclose(r.x, [1.0, 1.0], atol=1e-6)


def test_bounded_rosenbrock_feasible_and_monotone():
    bounds = Bounds([-2.0, -2.0], [0.5, 2.0])
    seen, cb = feasibility_recorder(bounds)
    r = minimize(rosenbrock, [-1.2, 1.0], bounds, gtol=1e-10, max_iter=200, callback=cb)
    assert all(seen)
    assert np.all(np.diff(r.history) <= 0)
    np.testing.assert_allclose(r.x, [0.5, 0.25], atol=1e-6)


def test_projects_infeasible_start():
    r = minimize(lambda x: (x @ x, 2 * x), [5.0, -5.0], Bounds.uniform(2, 1.0, 2.0))
    np.testing.assert_array_equal(r.x, [1.0, 1.0])


def test_infinite_bounds_same_path_as_unbounded(rng):
    B = rng.standard_normal((6, 6))
    fun = quadratic(B.T @ B + np.eye(6), rng.standard_normal(6))
    a = minimize(fun, np.zeros(6), gtol=1e-12)
    b = minimize(fun, np.zeros(6), Bounds.uniform(6, -np.inf, np.inf), gtol=1e-12)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.iterations == b.iterations


@pytest.mark.parametrize("dim", [2, 5, 10])
def test_quadratic_finite_termination(rng, dim):
    B = rng.standard_normal((dim, dim))
    A = B.T @ B + np.eye(dim)
    b = rng.standard_normal(dim)
    # curvature -> 0 makes every line search exact, recovering BFGS's
    # finite termination on quadratics
    r = minimize(quadratic(A, b), np.zeros(dim), gtol=1e-12, memory=dim, curvature=1e-12,
                 max_iter=dim + 2)
    assert r.iterations <= dim + 2
    np.testing.assert_allclose(r.x, np.linalg.solve(A, b), atol=1e-10)


def test_non_finite_start_raises():
    with pytest.raises(FloatingPointError):
        minimize(lambda x: (np.nan, x), [1.0])


def test_infinite_trial_values_backtrack():
    # objective undefined for x < 0.5
    def fun(x):
        if x[0] < 0.5:
            return np.inf, None
        return (x[0] - 0.2) ** 2, 2 * (x - 0.2)

    r = minimize(fun, [3.0], gtol=1e-10, max_iter=200)
    assert r.x[0] >= 0.5
    assert r.fun <= (3.0 - 0.2) ** 2


def test_line_search_failure_flagged():
    # gradient points the wrong way, so no step decreases the objective
    r = minimize(lambda x: (float(x @ x), -2 * x), [1.0, 1.0], max_iter=10)
    assert not r.converged
    assert "line search" in r.message


def test_max_iter_flag():
    r = minimize(rosenbrock, [-1.2, 1.0], gtol=1e-14, max_iter=3)
    assert r.iterations == 3 and not r.converged


def test_bounds_validation():
    with pytest.raises(ValueError):
        Bounds([1.0], [0.0])
