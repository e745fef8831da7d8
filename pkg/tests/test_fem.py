import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peakonlab.fem import (
    CyclicTridiagonal,
    HelmholtzSystem,
    NodalField,
    assemble_gradient_load,
    assemble_load,
    build_mesh,
    helmholtz_solve,
    integrate,
    l2_error,
    l2_norm,
    mass_matrix,
    project_function,
    stiffness_matrix,
)


def test_mesh_spacing_and_nodes():
    assert build_mesh(40, 20000).dx == pytest.approx(0.002, rel=1e-15)
    np.testing.assert_array_equal(build_mesh(40, 4).nodes, [0, 10, 20, 30])
    m = build_mesh(1, 3)
    assert m.dx == pytest.approx(1 / 3)
    assert m.nodes.size == 3
    assert m.wrap(1.0) == pytest.approx(0.0)


@pytest.mark.parametrize("L, n", [(0, 10), (-1, 10), (1, 2), (1, 0)])
def test_mesh_rejects_bad_arguments(L, n):
    with pytest.raises(ValueError):
        build_mesh(L, n)


def test_nodal_field_shape_is_checked():
    with pytest.raises(ValueError):
        NodalField(build_mesh(1, 5), np.zeros(4))


def test_projection_examples():
    mesh = build_mesh(40, 240)
    c = project_function(mesh, lambda x: 2.5)
    assert np.all(c.values == 2.5)
    steep = project_function(mesh, lambda x: 0.5 / np.cosh((x - 10) / (40 / 240)))
    assert steep.values[60] == pytest.approx(0.5, abs=1e-15)
    assert mesh.nodes[60] == pytest.approx(10.0)


def test_shallow_inflection_slope():
    # analytic: max |d/dx 0.5 sech(y/w)| = 0.25 / w, at y = w arccosh(sqrt 2)
    for n in (4000, 16000):
        mesh = build_mesh(40, n)
        u = project_function(mesh, lambda x: 0.5 / np.cosh((x - 10) / 1.0))
        s = u.slopes()
        c = int(np.argmin(s))
        assert mesh.cell_centres[c] == pytest.approx(10 + np.arccosh(np.sqrt(2)), abs=2 * mesh.dx)
    assert s.min() == pytest.approx(-0.25, rel=1e-6)


def test_slopes_are_cellwise_differences():
    mesh = build_mesh(4, 4)
    u = NodalField(mesh, [0.0, 1.0, 3.0, 6.0])
    np.testing.assert_allclose(u.slopes(), [1, 2, 3, -6])


def test_interpolation_matches_nodes_and_midpoints():
    mesh = build_mesh(4, 4)
    u = NodalField(mesh, [0.0, 1.0, 3.0, 6.0])
    np.testing.assert_allclose(u(mesh.nodes), u.values)
    np.testing.assert_allclose(u([0.5, 3.5, 4.5]), [0.5, 3.0, 0.5])


def test_integrate_examples():
    mesh = build_mesh(40, 7)
    assert integrate(mesh, np.ones((7, 3))) == pytest.approx(40.0)
    assert integrate(mesh, np.ones(7)) == pytest.approx(40.0)


@settings(max_examples=40, deadline=None)
@given(
    coeffs=st.lists(st.floats(-3, 3), min_size=6, max_size=6),
    L=st.floats(0.5, 50),
    n=st.integers(3, 40),
)
def test_integrate_exact_up_to_quintics(coeffs, L, n):
    mesh = build_mesh(L, n)
    p = np.polynomial.Polynomial(coeffs, domain=[0, L], window=[-1, 1])
    P = p.integ()
    exact = P(L) - P(0)
    got = integrate(mesh, p(mesh.quadrature_points()))
    scale = max(1.0, np.max(np.abs(p(np.linspace(0, L, 101)))) * L)
    assert got == pytest.approx(exact, abs=1e-11 * scale)


def test_l2_examples():
    mesh = build_mesh(40, 20)
    one = NodalField(mesh, np.ones(20))
    zero = NodalField(mesh, np.zeros(20))
    assert l2_error(one, one) == 0.0
    assert l2_error(one, zero) == pytest.approx(np.sqrt(40))
    hat = zero.copy()
    hat.values[5] = 1.0
    assert l2_norm(hat) == pytest.approx(np.sqrt(2 * mesh.dx / 3))


def test_l2_error_mesh_mismatch():
    a = NodalField(build_mesh(1, 4), np.zeros(4))
    b = NodalField(build_mesh(1, 5), np.zeros(5))
    with pytest.raises(ValueError):
        l2_error(a, b)


@pytest.mark.parametrize("n", [3, 8, 101])
def test_row_sums(n):
    mesh = build_mesh(2.5, n)
    np.testing.assert_allclose(mass_matrix(mesh).dense().sum(axis=1), mesh.dx, rtol=1e-14)
    np.testing.assert_allclose(stiffness_matrix(mesh).dense().sum(axis=1), 0.0, atol=1e-12)


def test_mass_matrix_matches_load_assembly():
    # M u must equal the load vector of the CG1 density u itself
    rng = np.random.default_rng(1)
    mesh = build_mesh(3.0, 9)
    u = NodalField(mesh, rng.standard_normal(9))
    np.testing.assert_allclose(mass_matrix(mesh).matvec(u.values), assemble_load(mesh, u.at_quadrature()), atol=1e-14)


def test_gradient_load_of_constant_and_stiffness():
    rng = np.random.default_rng(2)
    mesh = build_mesh(3.0, 9)
    assert np.all(assemble_gradient_load(mesh, np.ones((9, 3))) == 0)
    u = NodalField(mesh, rng.standard_normal(9))
    # int phi_x u_x = K u
    np.testing.assert_allclose(
        assemble_gradient_load(mesh, np.repeat(u.slopes()[:, None], 3, axis=1)),
        stiffness_matrix(mesh).matvec(u.values), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(3, 60), seed=st.integers(0, 2**32 - 1))
def test_cyclic_solve_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    sub, sup = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    diag = np.abs(sub) + np.abs(sup) + rng.uniform(0.5, 2, n)
    A = CyclicTridiagonal(sub, diag, sup)
    b = rng.standard_normal(n)
    np.testing.assert_allclose(A.solve(b), np.linalg.solve(A.dense(), b), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(A.matvec(b), A.dense() @ b, atol=1e-13)


def test_unfactorized_matrix_refuses_solve():
    with pytest.raises(RuntimeError):
        stiffness_matrix(build_mesh(1, 5)).solve(np.ones(5))


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0, 5.0])
def test_helmholtz_constant_load(alpha):
    mesh = build_mesh(40, 50)
    sysm = HelmholtzSystem(mesh, alpha)
    F = helmholtz_solve(sysm, assemble_load(mesh, np.full((50, 3), 1.7)))
    np.testing.assert_allclose(F.values, 1.7, rtol=1e-12)


def test_helmholtz_sine_eigenfunction():
    L, alpha = 40.0, 1.0
    k = 2 * np.pi / L
    errs = []
    for n in (100, 200, 400):
        mesh = build_mesh(L, n)
        F = helmholtz_solve(HelmholtzSystem(mesh, alpha), assemble_load(mesh, np.sin(k * mesh.quadrature_points())))
        exact = np.sin(k * mesh.nodes) / (1 + alpha**2 * k**2)
        errs.append(np.max(np.abs(F.values - exact)))
    assert errs[0] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.1)


def test_helmholtz_alpha_zero_is_l2_projection():
    mesh = build_mesh(40, 60)
    f = lambda x: np.cos(2 * np.pi * x / 40) + x / 40
    F = helmholtz_solve(HelmholtzSystem(mesh, 0.0), assemble_load(mesh, f(mesh.quadrature_points())))
    # Galerkin orthogonality: residual f - F is orthogonal to every basis function
    resid = f(mesh.quadrature_points()) - F.at_quadrature()
    assert np.max(np.abs(assemble_load(mesh, resid))) < 1e-13


def test_helmholtz_inverts_bilinear_form():
    rng = np.random.default_rng(3)
    mesh = build_mesh(10, 33)
    sysm = HelmholtzSystem(mesh, 0.7)
    F = rng.standard_normal(33)
    rhs = mass_matrix(mesh).matvec(F) + 0.49 * stiffness_matrix(mesh).matvec(F)
    np.testing.assert_allclose(helmholtz_solve(sysm, rhs).values, F, atol=1e-11)


def test_helmholtz_matrix_is_spd():
    A = HelmholtzSystem(build_mesh(40, 20), 1.0).dense()
    np.testing.assert_allclose(A, A.T)
    assert np.linalg.eigvalsh(A).min() > 0


@settings(max_examples=30, deadline=None)
@given(n=st.integers(3, 50), k=st.integers(-60, 60))
def test_projection_translation_equivariance(n, k):
    mesh = build_mesh(7.0, n)
    f = lambda x: np.exp(np.sin(2 * np.pi * x / 7.0))
    shifted = project_function(mesh, lambda x: f(x - k * mesh.dx))
    np.testing.assert_allclose(shifted.values, np.roll(project_function(mesh, f).values, k), atol=1e-12)
