import numpy as np
import pytest
import sympy as sp

from stokes_sem.problems import EXAMPLES, builtin_problem, polynomial_problem

RNG = np.random.default_rng(11)


def sample(n, lo=0.0, hi=1.0):
    return RNG.uniform(lo, hi, n), RNG.uniform(lo, hi, n)


def fd_divergence(spec, x, y, sub, h=1e-5):
    u = spec.exact.u
    return ((u(x + h, y, sub)[0] - u(x - h, y, sub)[0]) + (u(x, y + h, sub)[1] - u(x, y - h, sub)[1])) / (2 * h)


@pytest.mark.parametrize("example", EXAMPLES)
@pytest.mark.parametrize("sub", [1, 2])
def test_exact_velocity_is_divergence_free(example, sub):
    spec = builtin_problem(example, 1.0, 0.1)
    x, y = sample(100, -1, 1)
    assert np.abs(fd_divergence(spec, x, y, sub)).max() < 1e-8


@pytest.mark.parametrize("example", EXAMPLES)
def test_gradient_matches_finite_differences(example):
    spec = builtin_problem(example, 1.0, 0.1)
    x, y = sample(50)
    h = 1e-6
    G = spec.exact.grad_u(x, y, 2)
    gx = (spec.exact.u(x + h, y, 2) - spec.exact.u(x - h, y, 2)) / (2 * h)
    gy = (spec.exact.u(x, y + h, 2) - spec.exact.u(x, y - h, 2)) / (2 * h)
    np.testing.assert_allclose(G[:, 0], gx, atol=1e-7)
    np.testing.assert_allclose(G[:, 1], gy, atol=1e-7)


def test_example1_forcing_against_hand_derivation():
    # u1 = (y - 1/2) x^2 / nu, Lap u1 = 2 (y - 1/2) / nu, so f1 = -2 (y - 1/2) + e^x
    spec = builtin_problem("example1", 1.0, 0.1)
    x, y = sample(20)
    f = spec.f(x, y, 2)
    np.testing.assert_allclose(f[0], -2 * (y - 0.5) + np.exp(x), rtol=1e-12)
    np.testing.assert_allclose(f[1], 2 * x - np.exp(y), rtol=1e-12)


def test_example1_has_no_stress_jump():
    spec = builtin_problem("example1", 1.0, 0.1)
    x = np.linspace(0, 1, 9)
    g = spec.g(x, np.full_like(x, 0.5), np.zeros_like(x), np.ones_like(x))
    assert np.abs(g).max() < 1e-14


def test_example2_stress_jump_is_constant():
    spec = builtin_problem("example2", 1.0, 0.1)
    x = np.linspace(0, 1, 9)
    g = spec.g(x, np.full_like(x, 0.5), np.zeros_like(x), np.ones_like(x))
    assert g.dtype == float
    np.testing.assert_allclose(g, np.vstack([np.zeros_like(x), np.full_like(x, -3.0)]), atol=1e-14)


@pytest.mark.parametrize("example", ["example4", "example5"])
def test_circle_velocity_vanishes_on_interface(example):
    spec = builtin_problem(example, 0.1, 1.0)
    t = np.linspace(0, 2 * np.pi, 40)
    x, y = 0.5 * np.cos(t), 0.5 * np.sin(t)
    for sub in (1, 2):
        assert np.abs(spec.exact.u(x, y, sub)).max() < 1e-15


def test_example3_velocity_scales_with_inverse_viscosity():
    a = builtin_problem("example3", 1.0, 0.1)
    x, y = sample(10, 1.0, 1.4)
    np.testing.assert_allclose(a.exact.u(x, y, 2), 10 * a.exact.u(x, y, 1), rtol=1e-12)


def test_example5_marks_bottom_side_neumann():
    spec = builtin_problem("example5", 0.1, 1.0)
    mesh = spec.build_mesh()
    assert len(mesh.edges_of_kind("boundary_neumann")) == 1
    assert spec.neumann is not None


def test_polynomial_problem_is_symbolically_consistent():
    X, Y = sp.symbols("x y")
    psi = (Y - sp.Rational(1, 2)) ** 2 * X**2 * (1 - X)
    spec = polynomial_problem(2.0, 0.5)
    x, y = sample(10)
    u_ref = sp.lambdify((X, Y), [sp.diff(psi, Y) / 2, -sp.diff(psi, X) / 2])
    np.testing.assert_allclose(spec.exact.u(x, y, 1), np.array(u_ref(x, y)), rtol=1e-12)


def test_unknown_example():
    with pytest.raises(KeyError):
        builtin_problem("example9", 1.0, 1.0)
