import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpoisson.fem import (
    DirichletMap,
    NonPositiveConductivityError,
    PoissonProblem,
    assemble_mass,
    assemble_stiffness,
    read_field_csv,
    write_field_csv,
)
from diffpoisson.mesh import TriMesh, build_unit_square_mesh


@pytest.fixture(scope="module")
def problem8():
    return PoissonProblem(build_unit_square_mesh(8))


@pytest.fixture(scope="module")
def problem2():
    return PoissonProblem(build_unit_square_mesh(2))


def sinsin(mesh):
    return np.sin(np.pi * mesh.x) * np.sin(np.pi * mesh.y)


def test_dirichlet_map_round_trip(problem8, rng):
    bc = problem8.bc
    assert np.all(np.diff(bc.interior) > 0)
    assert not np.any(problem8.mesh.boundary[bc.interior])
    v = rng.standard_normal(bc.n_interior)
    np.testing.assert_array_equal(bc.restrict(bc.prolong(v)), v)
    assert np.all(bc.prolong(v)[problem8.mesh.boundary] == 0.0)


def test_stiffness_n1_hand_integration():
    mesh = build_unit_square_mesh(1)
    A = assemble_stiffness(mesh, np.ones(4)).toarray()
    expected = np.array([
        [1.0, -0.5, -0.5, 0.0],
        [-0.5, 1.0, 0.0, -0.5],
        [-0.5, 0.0, 1.0, -0.5],
        [0.0, -0.5, -0.5, 1.0],
    ])
    np.testing.assert_allclose(A, expected, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_stiffness_symmetric_zero_row_sums(n, seed):
    mesh = build_unit_square_mesh(n)
    kappa = np.random.default_rng(seed).uniform(0.1, 5.0, mesh.n_vertices)
    A = assemble_stiffness(mesh, kappa).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-14)
    np.testing.assert_allclose(A.sum(axis=1), 0.0, atol=1e-12)


def test_stiffness_linear_in_kappa(problem8, rng):
    mesh = problem8.mesh
    kappa = rng.uniform(0.5, 2.0, mesh.n_vertices)
    A1 = assemble_stiffness(mesh, kappa).toarray()
    A2 = assemble_stiffness(mesh, 2 * kappa).toarray()
    np.testing.assert_allclose(A2, 2 * A1, rtol=1e-14, atol=1e-14)


def test_reduced_stiffness_positive_definite(problem8, rng):
    J = problem8.jacobian(rng.uniform(0.5, 2.0, problem8.n_vertices))
    for _ in range(10):
        x = rng.standard_normal(J.n_rows)
        assert x @ J.matvec(x) > 0


def test_nonpositive_kappa_names_triangle():
    mesh = build_unit_square_mesh(2)
    kappa = np.ones(mesh.n_vertices)
    kappa[0] = -10.0
    with pytest.raises(NonPositiveConductivityError, match="triangle 0"):
        assemble_stiffness(mesh, kappa)


def test_mass_reference_element():
    mesh = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                   np.ones(3, bool))
    expected = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    np.testing.assert_allclose(assemble_mass(mesh).toarray(), expected, rtol=1e-15)


@pytest.mark.parametrize("n", [1, 3, 8])
def test_mass_total_and_lumped(n):
    mesh = build_unit_square_mesh(n)
    M = assemble_mass(mesh)
    assert M.values.sum() == pytest.approx(1.0, abs=1e-12)
    lumped = M.matvec(np.ones(mesh.n_vertices))
    assert np.all(lumped > 0)
    assert lumped.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(M.toarray(), M.toarray().T)


def test_residual_degenerate_and_trivial():
    p1 = PoissonProblem(build_unit_square_mesh(1))
    assert p1.residual(np.zeros(4), np.ones(4), np.ones(4)).shape == (0,)
    np.testing.assert_array_equal(p1.solve_forward(np.ones(4), np.ones(4)), np.zeros(4))
    p = PoissonProblem(build_unit_square_mesh(4))
    z = np.zeros(p.n_vertices)
    np.testing.assert_array_equal(p.residual(z, np.ones(p.n_vertices), z), np.zeros(9))


def test_residual_size_mismatch(problem8):
    with pytest.raises(ValueError):
        problem8.residual(np.zeros(3), np.ones(81), np.ones(81))


def test_solve_forward_contracts(problem8):
    n = problem8.n_vertices
    f = 2 * np.pi**2 * sinsin(problem8.mesh)
    u = problem8.solve_forward(np.ones(n), f, tol=1e-10)
    assert np.linalg.norm(problem8.residual(u, np.ones(n), f)) <= 1e-10
    assert np.all(u[problem8.mesh.boundary] == 0.0)
    np.testing.assert_array_equal(problem8.solve_forward(np.ones(n), np.zeros(n)), np.zeros(n))
    u2 = problem8.solve_forward(2 * np.ones(n), f)
    np.testing.assert_allclose(u2, 0.5 * u, rtol=1e-10, atol=1e-14)


def test_manufactured_solution_rate():
    errors = []
    for n in (8, 16, 32):
        p = PoissonProblem(build_unit_square_mesh(n))
        exact = sinsin(p.mesh)
        u = p.solve_forward(np.ones(p.n_vertices), 2 * np.pi**2 * exact)
        errors.append(p.l2_error(u, exact))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(np.abs(rates - 2.0) <= 0.15)


# -- parameter derivatives ----------------------------------------------------


def test_dF_dkappa_action_is_stiffness_difference(problem8, rng):
    p = problem8
    n = p.n_vertices
    kappa = rng.uniform(0.5, 2.0, n)
    u = p.solve_forward(kappa, np.ones(n))
    dk = rng.uniform(-0.3, 0.3, n)
    expected = p.bc.restrict(
        assemble_stiffness(p.mesh, kappa + dk).matvec(u) - assemble_stiffness(p.mesh, kappa).matvec(u)
    )
    np.testing.assert_allclose(p.dF_dkappa_action(u, dk), expected, atol=1e-13)
    np.testing.assert_array_equal(p.dF_dkappa_action(u, np.zeros(n)), np.zeros(p.bc.n_interior))


def test_dF_dkappa_action_central_difference(problem8, rng):
    p = problem8
    n = p.n_vertices
    kappa = rng.uniform(0.5, 2.0, n)
    f = np.ones(n)
    u = p.solve_forward(kappa, f)
    dk = rng.standard_normal(n)
    eps = 1e-6
    fd = (p.residual(u, kappa + eps * dk, f) - p.residual(u, kappa - eps * dk, f)) / (2 * eps)
    np.testing.assert_allclose(p.dF_dkappa_action(u, dk), fd, atol=1e-9)


def dense_dF_dkappa(p, u):
    cols = []
    for k in range(p.n_vertices):
        e = np.zeros(p.n_vertices)
        e[k] = 1.0
        cols.append(p.bc.restrict(assemble_stiffness(p.mesh, e, check_positive=False).matvec(u)))
    return np.column_stack(cols)


def test_dF_dkappa_transpose_brute_force(problem2, rng):
    p = problem2
    u = p.solve_forward(rng.uniform(0.5, 2.0, p.n_vertices), np.ones(p.n_vertices))
    D = dense_dF_dkappa(p, u)
    lam = rng.standard_normal(p.bc.n_interior)
    np.testing.assert_allclose(p.dF_dkappa_transpose_action(u, lam), D.T @ lam, atol=1e-14)
    w = rng.standard_normal(p.n_vertices)
    np.testing.assert_allclose(p.dF_dkappa_action(u, w), D @ w, atol=1e-14)


def test_dF_df_brute_force(problem2, rng):
    p = problem2
    M = p.mass.toarray()
    D = -M[p.bc.interior, :]
    lam = rng.standard_normal(p.bc.n_interior)
    w = rng.standard_normal(p.n_vertices)
    np.testing.assert_allclose(p.dF_df_action(w), D @ w, atol=1e-15)
    np.testing.assert_allclose(p.dF_df_transpose_action(lam), D.T @ lam, atol=1e-15)
    np.testing.assert_array_equal(p.dF_df_action(np.zeros(p.n_vertices)), 0.0)


@pytest.mark.parametrize("which", ["kappa", "f"])
def test_transpose_actions_adjoint_identity(problem8, rng, which):
    p = problem8
    u = p.solve_forward(rng.uniform(0.5, 2.0, p.n_vertices), np.ones(p.n_vertices))
    for _ in range(10):
        w = rng.standard_normal(p.n_vertices)
        lam = rng.standard_normal(p.bc.n_interior)
        if which == "kappa":
            lhs = lam @ p.dF_dkappa_action(u, w)
            rhs = p.dF_dkappa_transpose_action(u, lam) @ w
        else:
            lhs = lam @ p.dF_df_action(w)
            rhs = p.dF_df_transpose_action(lam) @ w
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
    zero = np.zeros(p.bc.n_interior)
    np.testing.assert_array_equal(p.dF_dkappa_transpose_action(u, zero), 0.0)
    np.testing.assert_array_equal(p.dF_df_transpose_action(zero), 0.0)


# -- functionals ----------------------------------------------------------------


def central_gradient(fun, x, eps):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        g[k] = (fun(x + e) - fun(x - e)) / (2 * eps)
    return g


def test_misfit(problem8, rng):
    p = problem8
    n = p.n_vertices
    t = rng.standard_normal(n)
    assert p.misfit_value(t, t) == 0.0
    np.testing.assert_array_equal(p.misfit_grad_u(t, t), 0.0)
    assert p.misfit_value(t + 1.0, t) == pytest.approx(0.5, abs=1e-12)
    u = rng.standard_normal(n)
    fd = central_gradient(lambda v: p.misfit_value(v, t), u, 1e-6)
    np.testing.assert_allclose(p.misfit_grad_u(u, t), fd, rtol=1e-6, atol=1e-10)


def test_control_regularization(problem8, rng):
    p = problem8
    n = p.n_vertices
    assert p.control_reg_value(np.zeros(n), 1.0) == 0.0
    assert p.control_reg_value(np.ones(n), 2.0) == pytest.approx(1.0, abs=1e-12)
    f = rng.standard_normal(n)
    fd = central_gradient(lambda v: p.control_reg_value(v, 0.3), f, 1e-6)
    np.testing.assert_allclose(p.control_reg_grad(f, 0.3), fd, rtol=1e-6, atol=1e-10)


def test_kappa_regularization(problem8, rng):
    p = problem8
    n = p.n_vertices
    assert p.kappa_reg_value(np.full(n, 3.0), 1.0) == pytest.approx(0.0, abs=1e-12)
    assert p.kappa_reg_value(p.mesh.x.copy(), 1e-3) == pytest.approx(0.5e-3, rel=1e-12)
    k = rng.standard_normal(n)
    fd = central_gradient(lambda v: p.kappa_reg_value(v, 0.7), k, 1e-6)
    np.testing.assert_allclose(p.kappa_reg_grad(k, 0.7), fd, rtol=1e-6, atol=1e-10)


def test_l2_norm():
    p = PoissonProblem(build_unit_square_mesh(64))
    n = p.n_vertices
    assert p.l2_norm(np.zeros(n)) == 0.0
    assert p.l2_norm(np.ones(n)) == pytest.approx(1.0, abs=1e-12)
    assert p.l2_norm(sinsin(p.mesh)) == pytest.approx(0.5, rel=0.02)
    assert p.l2_error(np.ones(n), np.zeros(n)) == pytest.approx(1.0)


def test_field_csv_round_trip(tmp_path, problem2, rng):
    values = rng.standard_normal(problem2.n_vertices)
    write_field_csv(tmp_path / "u.csv", problem2.mesh, values, "u")
    assert (tmp_path / "u.csv").read_text().splitlines()[0] == "vertex,x,y,u"
    np.testing.assert_array_equal(read_field_csv(tmp_path / "u.csv"), values)


def test_non_finite_field_rejected(problem2):
    bad = np.ones(problem2.n_vertices)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        problem2.l2_norm(bad)
