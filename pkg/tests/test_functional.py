import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_sem.basis import NodalField, gll_rule
from stokes_sem.functional import (
    TERM_GROUPS, LeastSquaresFunctional, ProblemSpec, assemble_normal_system, evaluate_functional,
    interpolate_exact, pin_point,
)
from stokes_sem.geometry import mesh_from_elements, segment
from stokes_sem.postprocess import compute_errors
from stokes_sem.problems import builtin_problem, polynomial_problem


def zero2(x, y, *rest):
    return np.zeros((2,) + np.shape(x))


def blank_spec(nu=1.0, **kw):
    args = dict(name="blank", geometry="split_square", nu1=nu, nu2=nu, f=zero2, g=zero2, dirichlet=zero2)
    args.update(kw)
    return ProblemSpec(**args)


def reference_square_mesh():
    c = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    return mesh_from_elements([([segment(c[k], c[(k + 1) % 4]) for k in range(4)], 1)])


@pytest.fixture(scope="module")
def ex1_w4():
    spec = builtin_problem("example1", 1.0, 0.1)
    mesh = spec.build_mesh()
    return LeastSquaresFunctional(mesh, spec, 4)


@pytest.fixture(scope="module")
def ex4_w3():
    spec = builtin_problem("example4", 0.1, 1.0)
    mesh = spec.build_mesh()
    return LeastSquaresFunctional(mesh, spec, 3)


@pytest.mark.parametrize("name", ["ex1_w4", "ex4_w3"])
def test_normal_matrix_symmetric(name, request):
    F = request.getfixturevalue(name)
    system = F.normal_system()
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.standard_normal((2, F.layout.size))
        lhs, rhs = a @ system.apply(b), b @ system.apply(a)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


@pytest.mark.parametrize("name", ["ex1_w4", "ex4_w3"])
def test_quadratic_form_matches_functional(name, request):
    F = request.getfixturevalue(name)
    system = F.normal_system()
    rng = np.random.default_rng(2)
    for _ in range(5):
        v = rng.standard_normal(F.layout.size)
        direct = F.value(v)
        assert system.quadratic(v) == pytest.approx(direct, rel=1e-10)


def test_gradient_finite_difference(ex1_w4):
    F = ex1_w4
    system = F.normal_system()
    rng = np.random.default_rng(3)
    v = rng.standard_normal(F.layout.size)
    grad = 2 * (system.apply(v) - system.rhs)
    for _ in range(5):
        d = rng.standard_normal(F.layout.size)
        d /= np.linalg.norm(d)
        eps = 1e-5
        fd = (F.value(v + eps * d) - F.value(v - eps * d)) / (2 * eps)
        assert fd == pytest.approx(grad @ d, rel=1e-6)


def test_normal_system_positive_definite_small():
    spec = polynomial_problem(1.0, 0.5)
    A = assemble_normal_system(spec.build_mesh(), spec, 3).dense()
    assert np.linalg.eigvalsh(A).min() > 0


def test_breakdown_sums_to_value(ex1_w4):
    v = np.random.default_rng(4).standard_normal(ex1_w4.layout.size)
    parts = ex1_w4.breakdown(v)
    assert set(parts) == set(TERM_GROUPS)
    assert sum(parts.values()) == pytest.approx(ex1_w4.value(v), rel=1e-12)


def test_term_counts(ex1_w4):
    F = ex1_w4
    assert len(F.terms_of("pde")) == 4 and len(F.terms_of("div")) == 4
    assert len(F.terms_of("interface")) == 2
    assert len(F.terms_of("interior")) == 2
    assert len(F.terms_of("boundary")) == 8
    assert len(F.terms_of("pin")) == 1


def test_example2_interface_term_vanishes_on_interpolant():
    spec = builtin_problem("example2", 1.0, 0.1)
    F = LeastSquaresFunctional(spec.build_mesh(), spec, 4)
    V = interpolate_exact(F)
    parts = F.breakdown(V)
    assert parts["interface"] <= 1e-18
    assert F.value(V) <= 1e-18


def test_example5_has_neumann_term_and_no_pin():
    spec = builtin_problem("example5", 0.1, 1.0)
    F = LeastSquaresFunctional(spec.build_mesh(), spec, 3)
    assert not F.pin and not F.terms_of("pin")
    neumann = [t for t in F.terms_of("boundary") if t.label.startswith("boundary_neumann")]
    assert len(neumann) == 1
    # the Neumann residual of the zero field is the traction data itself
    assert neumann[0].value(np.zeros(F.layout.size)) > 0


def test_polynomial_solution_is_reproduced():
    spec = polynomial_problem(1.0, 0.1)
    mesh = spec.build_mesh()
    F = LeastSquaresFunctional(mesh, spec, 4)
    system = F.normal_system()
    V = np.linalg.solve(system.dense(), system.rhs)
    assert F.value(V) <= 1e-16
    err = compute_errors(NodalField(F.layout, V), spec, mesh, pinned=True)
    assert err.E_u <= 1e-9 and err.E_p <= 1e-9


@settings(max_examples=8, deadline=None)
@given(scale=st.floats(0.01, 100.0))
def test_data_scaling_linearity(scale):
    base = polynomial_problem(1.0, 0.1)
    scaled = ProblemSpec(
        name="scaled", geometry=base.geometry, nu1=base.nu1, nu2=base.nu2,
        f=lambda x, y, s: scale * np.asarray(base.f(x, y, s)),
        g=lambda x, y, nx, ny: scale * np.asarray(base.g(x, y, nx, ny)),
        dirichlet=lambda x, y, s: scale * np.asarray(base.dirichlet(x, y, s)),
    )
    mesh = base.build_mesh()
    s0 = assemble_normal_system(mesh, base, 3)
    s1 = assemble_normal_system(mesh, scaled, 3)
    v0 = np.linalg.solve(s0.dense(), s0.rhs)
    v1 = np.linalg.solve(s1.dense(), s1.rhs)
    np.testing.assert_allclose(v1, scale * v0, rtol=1e-8, atol=1e-8 * scale * np.abs(v0).max())


def test_interpolant_functional_decays_with_w():
    spec = builtin_problem("example1", 1.0, 0.1)
    mesh = spec.build_mesh()
    vals = {}
    for W in (3, 6):
        F = LeastSquaresFunctional(mesh, spec, W)
        vals[W] = F.value(interpolate_exact(F))
    assert vals[6] <= 1e-2 * vals[3]


def test_dropping_a_term_group_decreases_value(ex1_w4):
    v = np.random.default_rng(9).standard_normal(ex1_w4.layout.size)
    total = ex1_w4.value(v)
    for group, part in ex1_w4.breakdown(v).items():
        assert part > 0, group
        assert total - part < total


def test_divergence_term_of_linear_field():
    # u = (xi, 0) on the reference square: div u = 1, ||1||_{H1(S)}^2 = 4
    mesh = reference_square_mesh()
    F = LeastSquaresFunctional(mesh, blank_spec(), 3)
    V = NodalField(F.layout)
    x = gll_rule(3).nodes
    XI, _ = np.meshgrid(x, x)
    V.set_grid(0, "u1", XI)
    assert F.breakdown(V)["div"] == pytest.approx(4.0, rel=1e-12)


def test_pin_point_and_gauge(ex1_w4):
    assert pin_point(ex1_w4.mesh) == pytest.approx((0.0, 0.0))
    V = interpolate_exact(ex1_w4)
    assert V.grid(0, "p")[0, 0] == 0.0


def test_evaluate_functional_wrapper(ex1_w4):
    V = interpolate_exact(ex1_w4)
    assert evaluate_functional(ex1_w4.mesh, ex1_w4.spec, V) == pytest.approx(ex1_w4.value(V), rel=1e-13)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        blank_spec(nu=0.0)
    with pytest.raises(ValueError):
        LeastSquaresFunctional(reference_square_mesh(), blank_spec(), 0)
