import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_sem.basis import DofLayout, NodalField, gll_rule
from stokes_sem.functional import LeastSquaresFunctional, interpolate_exact
from stokes_sem.geometry import build_mesh
from stokes_sem.postprocess import (
    ErrorReport, compute_errors, convergence_table, log_slope, make_conforming, shared_node_groups,
)
from stokes_sem.problems import builtin_problem, polynomial_problem


@pytest.fixture(scope="module")
def square_mesh():
    return build_mesh("split_square")


def field_from(mesh, W, fn):
    """Nodal field whose velocity is fn(x, y, k) per element and pressure x + y."""
    f = NodalField(DofLayout(mesh.n_elements, W))
    x1 = gll_rule(W).nodes
    XI, ETA = np.meshgrid(x1, x1)
    for k, emap in enumerate(mesh.elements):
        x, y = emap.eval(XI, ETA)
        u1, u2 = fn(x, y, k)
        f.set_grid(k, "u1", u1)
        f.set_grid(k, "u2", u2)
        f.set_grid(k, "p", x + y)
    return f


def test_shared_node_groups_split_square(square_mesh):
    groups = shared_node_groups(square_mesh, 2)
    sizes = sorted(len(g) for g in groups)
    # 5 + 5 nodes on the two internal lines, the centre counted once and shared by 4
    assert sizes == [2] * 8 + [4]


def test_opposite_values_average_to_zero(square_mesh):
    sign = [1, -1, -1, 1]  # checkerboard
    W = 4
    f = field_from(square_mesh, W, lambda x, y, k: (sign[k] * np.ones_like(x), sign[k] * (1 + x)))
    g = make_conforming(f, square_mesh)
    for group in shared_node_groups(square_mesh, W):
        elem, loc = np.divmod(group, f.layout.block)
        for var in (0, 1):
            vals = g.values[elem * f.layout.per_element + var * f.layout.block + loc]
            assert np.abs(vals).max() <= 1e-14
    np.testing.assert_array_equal(g.grid(0, "p"), f.grid(0, "p"))


def test_conforming_field_unchanged(square_mesh):
    f = field_from(square_mesh, 5, lambda x, y, k: (np.sin(x) * y, x**3))
    g = make_conforming(f, square_mesh)
    np.testing.assert_allclose(g.values, f.values, atol=1e-15)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), W=st.integers(2, 6))
def test_correction_is_idempotent(seed, W):
    mesh = build_mesh("split_square")
    f = NodalField(DofLayout(mesh.n_elements, W), np.random.default_rng(seed).standard_normal(
        mesh.n_elements * 3 * (W + 1) ** 2))
    once = make_conforming(f, mesh)
    np.testing.assert_allclose(make_conforming(once, mesh).values, once.values, atol=1e-14)


def test_correction_on_curved_mesh_is_idempotent():
    mesh = build_mesh("circle_in_square")
    W = 4
    f = NodalField(DofLayout(mesh.n_elements, W), np.random.default_rng(0).standard_normal(9 * 3 * 25))
    once = make_conforming(f, mesh)
    np.testing.assert_allclose(make_conforming(once, mesh).values, once.values, atol=1e-14)
    # 16 shared edges with W-1 interior nodes each, plus 12 shared vertices
    # (central corners, points on the circle, square corners)
    groups = shared_node_groups(mesh, W)
    assert len(groups) == 16 * (W - 1) + 12
    assert sorted(len(g) for g in groups)[-8:] == [3] * 4 + [4] * 4


def test_interpolant_of_polynomial_solution_is_exact():
    spec = polynomial_problem(1.0, 0.1)
    F = LeastSquaresFunctional(spec.build_mesh(), spec, 4)
    err = compute_errors(interpolate_exact(F), spec, F.mesh, pinned=True)
    assert err.E_u <= 1e-12 and err.E_p <= 1e-12 and err.E_c <= 1e-12


def test_pressure_gauge_invariance():
    spec = builtin_problem("example1", 1.0, 0.1)
    F = LeastSquaresFunctional(spec.build_mesh(), spec, 4)
    V = interpolate_exact(F)
    e0 = compute_errors(V, spec, F.mesh, pinned=True)
    shifted = V.copy()
    for k in range(F.layout.n_elements):
        shifted.set_grid(k, "p", shifted.grid(k, "p") + 7.5)
    e1 = compute_errors(shifted, spec, F.mesh, pinned=True)
    assert e1.E_p == pytest.approx(e0.E_p, rel=1e-9, abs=1e-14)
    assert e1.E_u == e0.E_u


def test_zero_field_has_unit_relative_error():
    spec = builtin_problem("example3", 1.0, 0.1)
    mesh = spec.build_mesh()
    err = compute_errors(NodalField(DofLayout(mesh.n_elements, 3)), spec, mesh, pinned=False)
    assert err.E_u == pytest.approx(1.0) and err.E_p == pytest.approx(1.0)
    assert err.E_c == 0.0


def test_divergence_of_known_field(square_mesh):
    # u = (x, 0) has div 1 on the unit square
    f = field_from(square_mesh, 3, lambda x, y, k: (x, np.zeros_like(x)))
    spec = polynomial_problem(1.0, 1.0)
    err = compute_errors(f, spec, square_mesh)
    assert err.E_c == pytest.approx(1.0, rel=1e-13)
    assert err.E_c_raw == err.E_c


def test_missing_exact_solution(square_mesh):
    from dataclasses import replace
    spec = replace(polynomial_problem(1.0, 1.0), exact=None)
    with pytest.raises(ValueError):
        compute_errors(NodalField(DofLayout(4, 2)), spec, square_mesh)


@pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf])
def test_error_report_validation(bad):
    with pytest.raises(ValueError):
        ErrorReport(3, bad, 0.0, 0.0, 0.0)


def test_log_slope_exact_decade():
    Ws = np.arange(2, 9)
    assert log_slope(Ws, 10.0 ** (-Ws)) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        log_slope([3], [1e-3])


def test_convergence_table_flags_flat_series():
    reps = [ErrorReport(W, 1e-3, 2e-3, 1e-4, 1e-4) for W in (4, 2, 3)]
    table = convergence_table(reps)
    assert [r["W"] for r in table.rows] == [2, 3, 4]
    assert table.no_convergence
    assert all(abs(s) < 1e-12 for s in table.slopes.values())


def test_convergence_table_decaying_series():
    reps = [ErrorReport(W, 10.0**-W, 10.0**-W, 10.0**-W, 1.0) for W in range(2, 7)]
    table = convergence_table(reps)
    assert not table.no_convergence
    assert table.slopes["E_u"] == pytest.approx(-1.0)


def test_convergence_table_needs_three_points():
    table = convergence_table([ErrorReport(2, 1e-2, 1e-2, 1e-2, 1e-2), ErrorReport(3, 1e-3, 1e-3, 1e-3, 1e-3)])
    assert table.slopes == {} and not table.no_convergence
