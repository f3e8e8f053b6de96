"""Manufactured Stokes interface problems with closed-form data.

Forcing, interface stress jumps and boundary data are derived symbolically
from the piecewise exact solution, so every example is self-consistent.
"""
from __future__ import annotations

import numpy as np
import sympy as sp

from .functional import ExactSolution, ProblemSpec

X, Y = sp.symbols("x y", real=True)

EXAMPLES = ("example1", "example2", "example3", "example4", "example5")


def _vectorize(expr):
    fn = sp.lambdify((X, Y), expr, "numpy")

    def call(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(x, y), dtype=float), np.broadcast(x, y).shape).copy()

    return call


class _Piecewise:
    """Symbolic velocity/pressure on both subdomains and the data they induce."""

    def __init__(self, u: dict, p: dict, nu: dict):
        self.nu = nu
        self.u = {i: [_vectorize(c) for c in u[i]] for i in (1, 2)}
        self.p = {i: _vectorize(p[i]) for i in (1, 2)}
        self.grad = {i: [[_vectorize(sp.diff(c, v)) for v in (X, Y)] for c in u[i]] for i in (1, 2)}
        self.f = {}
        for i in (1, 2):
            comps = []
            for c, v in zip(u[i], (X, Y)):
                lap = sp.diff(c, X, 2) + sp.diff(c, Y, 2)
                comps.append(_vectorize(sp.simplify(-nu[i] * lap + sp.diff(p[i], v))))
            self.f[i] = comps
        self.div = {i: _vectorize(sp.diff(u[i][0], X) + sp.diff(u[i][1], Y)) for i in (1, 2)}

    def velocity(self, x, y, sub):
        return np.stack([c(x, y) for c in self.u[sub]])

    def gradient(self, x, y, sub):
        return np.stack([np.stack([d(x, y) for d in row]) for row in self.grad[sub]])

    def pressure(self, x, y, sub):
        return self.p[sub](x, y)

    def forcing(self, x, y, sub):
        return np.stack([c(x, y) for c in self.f[sub]])

    def traction(self, x, y, nx, ny, sub):
        """(nu grad u - p I) n on the given subdomain's side."""
        G = self.gradient(x, y, sub)
        p = self.pressure(x, y, sub)
        nu = float(self.nu[sub])
        return np.stack([
            nu * (G[0, 0] * nx + G[0, 1] * ny) - p * nx,
            nu * (G[1, 0] * nx + G[1, 1] * ny) - p * ny,
        ])

    def stress_jump(self, x, y, nx, ny):
        return self.traction(x, y, nx, ny, 1) - self.traction(x, y, nx, ny, 2)

    def problem(self, name: str, geometry: str, neumann_marker=None) -> ProblemSpec:
        exact = ExactSolution(self.velocity, self.gradient, self.pressure)
        return ProblemSpec(
            name=name,
            geometry=geometry,
            nu1=float(self.nu[1]),
            nu2=float(self.nu[2]),
            f=self.forcing,
            g=self.stress_jump,
            dirichlet=self.velocity,
            neumann=self.traction if neumann_marker is not None else None,
            neumann_marker=neumann_marker,
            exact=exact,
        )


def _bottom_side(x, y):
    return np.isclose(y, -1.0, atol=1e-12)


def builtin_problem(example: str, nu1: float, nu2: float) -> ProblemSpec:
    """One of the five built-in examples at the requested viscosity pair."""
    nu = {1: sp.nsimplify(nu1), 2: sp.nsimplify(nu2)}
    if example in ("example1", "example2"):
        u = {i: ((Y - sp.Rational(1, 2)) * X**2 / nu[i], -X * (Y - sp.Rational(1, 2))**2 / nu[i]) for i in (1, 2)}
        if example == "example1":
            p = {i: sp.exp(X) - sp.exp(Y) for i in (1, 2)}
        else:
            p = {1: 2 * X * Y + X**2, 2: 2 * X * Y + X**2 - 3}
        return _Piecewise(u, p, nu).problem(example, "split_square")
    if example == "example3":
        s = sp.sin(sp.Rational(9, 4) - X**2 - Y**2)
        u = {i: (-Y * s / nu[i], X * s / nu[i]) for i in (1, 2)}
        p = {i: sp.exp(X + Y) - sp.exp(2) for i in (1, 2)}
        return _Piecewise(u, p, nu).problem(example, "quarter_annulus")
    if example in ("example4", "example5"):
        c = X**2 + Y**2 - sp.Rational(1, 4)
        u = {i: (Y * c / nu[i], -X * c / nu[i]) for i in (1, 2)}
        p = {i: X**2 - Y**2 for i in (1, 2)}
        marker = _bottom_side if example == "example5" else None
        return _Piecewise(u, p, nu).problem(example, "circle_in_square", marker)
    raise KeyError(f"unknown example {example!r}")


def polynomial_problem(nu1: float, nu2: float, geometry: str = "split_square") -> ProblemSpec:
    """Low-degree polynomial solution with a pressure jump, exactly representable for W >= 3."""
    nu = {1: sp.nsimplify(nu1), 2: sp.nsimplify(nu2)}
    # stream function psi = (y - 1/2)^2 x^2 (1 - x) keeps u continuous across y = 1/2
    psi = (Y - sp.Rational(1, 2)) ** 2 * X**2 * (1 - X)
    u = {i: (sp.diff(psi, Y) / nu[i], -sp.diff(psi, X) / nu[i]) for i in (1, 2)}
    p = {1: X * Y - X**2, 2: X * Y - X**2 + 1}
    return _Piecewise(u, p, nu).problem("polynomial", geometry)

