"""GLL rules, Lagrange bases on tensor grids and nodal data utilities.

Nodal grids are stored as arrays of shape ``(n, n)`` indexed ``[j, i]`` with
``j`` running over the eta nodes and ``i`` over the xi nodes, so the flat
(row-major) order is eta-major.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

MAX_ORDER = 64

# local side numbering: 0: eta=-1, 1: xi=+1, 2: eta=+1, 3: xi=-1
SIDE_POINTS = {
    0: lambda t: (t, -np.ones_like(t)),
    1: lambda t: (np.ones_like(t), t),
    2: lambda t: (t, np.ones_like(t)),
    3: lambda t: (-np.ones_like(t), t),
}


@dataclass(frozen=True, eq=False)
class GllRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.order + 1


def _legendre_and_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P_n(x) and P_n'(x) by the three-term recurrence."""
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    # P_n' from (1 - x^2) P_n' = n (P_{n-1} - x P_n); only used off the endpoints
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = n * (p0 - x * p1) / (1.0 - x * x)
    return p1, dp


def legendre_derivative(n: int, x) -> np.ndarray:
    """P_n'(x) evaluated with numpy's Legendre series (valid at the endpoints too)."""
    c = np.zeros(n + 1)
    c[n] = 1.0
    return legendre.legval(np.asarray(x, dtype=float), legendre.legder(c))


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w / np.max(np.abs(w))


def differentiation_matrix(nodes: np.ndarray) -> np.ndarray:
    """Nodal differentiation matrix of the Lagrange interpolant on ``nodes``."""
    w = barycentric_weights(nodes)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@lru_cache(maxsize=None)
def gll_rule(W: int) -> GllRule:
    """Gauss-Lobatto-Legendre nodes, weights and differentiation matrix of order W."""
    if not 1 <= W <= MAX_ORDER:
        raise ValueError(f"GLL order must lie in [1, {MAX_ORDER}], got {W}")
    if W == 1:
        nodes = np.array([-1.0, 1.0])
    else:
        # interior nodes are the roots of P_W'; Newton from Chebyshev-Lobatto guesses
        x = -np.cos(np.pi * np.arange(1, W) / W)
        for _ in range(100):
            c = np.zeros(W + 1)
            c[W] = 1.0
            d1 = legendre.legder(c)
            d2 = legendre.legder(c, 2)
            step = legendre.legval(x, d1) / legendre.legval(x, d2)
            x = x - step
            if np.max(np.abs(step)) < 1e-15:
                break
        else:
            raise RuntimeError(f"GLL Newton iteration did not converge for W={W}")
        x = 0.5 * (x - x[::-1])  # enforce symmetry
        nodes = np.concatenate(([-1.0], x, [1.0]))
    pw, _ = _legendre_and_derivative(W, nodes)
    weights = 2.0 / (W * (W + 1) * pw**2)
    D = differentiation_matrix(nodes)
    for arr in (nodes, weights, D):
        arr.setflags(write=False)
    return GllRule(W, nodes, weights, D)


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [-1, 1]."""
    x, w = legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def lagrange_matrix(nodes: np.ndarray, points, deriv: int = 0) -> np.ndarray:
    """Matrix ``E`` with ``E[k, i] = l_i^{(deriv)}(points[k])`` for the Lagrange basis on nodes."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    w = barycentric_weights(nodes)
    diff = points[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-14, rtol=0.0)
    diff[exact] = 1.0
    terms = w[None, :] / diff
    E = terms / terms.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    if np.any(rows):
        E[rows] = exact[rows].astype(float)
    for _ in range(deriv):
        E = E @ differentiation_matrix(nodes)
    return E


def tensor_derivative(grid: np.ndarray, direction: str, rule: GllRule | None = None) -> np.ndarray:
    """Nodal values of d/dxi or d/deta of the tensor interpolant of ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if rule is None:
        rule = gll_rule(grid.shape[0] - 1)
    D = rule.diff_matrix
    if direction in ("xi", "ξ", 0):
        return grid @ D.T
    if direction in ("eta", "η", 1):
        return D @ grid
    raise ValueError(f"unknown direction {direction!r}")


def side_points(side: int, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference coordinates of the points with side parameter ``t`` on a local side."""
    if side not in SIDE_POINTS:
        raise ValueError(f"side must be 0..3, got {side}")
    return SIDE_POINTS[side](np.asarray(t, dtype=float))


def extract_trace(grid: np.ndarray, side: int, flip: bool = False) -> np.ndarray:
    """Nodal values of a grid on a local side, optionally reversed in direction."""
    grid = np.asarray(grid)
    if side == 0:
        tr = grid[0, :]
    elif side == 1:
        tr = grid[:, -1]
    elif side == 2:
        tr = grid[-1, :]
    elif side == 3:
        tr = grid[:, 0]
    else:
        raise ValueError(f"side must be 0..3, got {side}")
    return tr[::-1].copy() if flip else tr.copy()


def tensor_eval_matrix(nodes: np.ndarray, xi, eta, dxi: int = 0, deta: int = 0) -> np.ndarray:
    """Evaluate (derivatives of) a tensor interpolant at scattered points.

    Returns ``E`` of shape ``(len(xi), n*n)`` acting on row-major nodal grids.
    """
    Lx = lagrange_matrix(nodes, xi, dxi)
    Le = lagrange_matrix(nodes, eta, deta)
    return (Le[:, :, None] * Lx[:, None, :]).reshape(len(Lx), -1)


def tensor_grid_matrix(nodes: np.ndarray, xi_pts, eta_pts, dxi: int = 0, deta: int = 0) -> np.ndarray:
    """Like :func:`tensor_eval_matrix` but for the tensor grid ``eta_pts x xi_pts``."""
    Lx = lagrange_matrix(nodes, xi_pts, dxi)
    Le = lagrange_matrix(nodes, eta_pts, deta)
    return np.kron(Le, Lx)


def interpolate_grid(grid: np.ndarray, xi, eta) -> np.ndarray:
    """Evaluate the tensor interpolant of a nodal grid at scattered points."""
    grid = np.asarray(grid, dtype=float)
    nodes = gll_rule(grid.shape[0] - 1).nodes
    Lx = lagrange_matrix(nodes, xi)
    Le = lagrange_matrix(nodes, eta)
    return np.einsum("kj,ji,ki->k", Le, grid, Lx)


def l2_fit_matrix(W: int, n_fine: int) -> np.ndarray:
    """Discrete L2 projection onto degree-W polynomials (nodal values) from n_fine GLL samples."""
    fine = gll_rule(n_fine - 1)
    coarse = gll_rule(W)
    Phi = lagrange_matrix(coarse.nodes, fine.nodes)
    Wd = fine.weights
    M = Phi.T @ (Wd[:, None] * Phi)
    return np.linalg.solve(M, Phi.T * Wd[None, :])


def project_data(func, element_map, d: int) -> np.ndarray:
    """Degree-d nodal grid of ``f(M(xi, eta)) * sqrt(J)`` on an element.

    ``func`` maps arrays ``(x, y)`` to an array of shape ``(..., )`` or
    ``(ncomp, ...)``; the result has shape ``(n, n)`` or ``(ncomp, n, n)``.
    """
    nodes = gll_rule(d).nodes
    XI, ETA = np.meshgrid(nodes, nodes)
    x, y = element_map.eval(XI, ETA)
    vals = np.asarray(func(x, y), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite data value encountered")
    sqrt_j = np.sqrt(element_map.jacobian(XI, ETA))
    return vals * sqrt_j


VARIABLES = ("u1", "u2", "p")


@dataclass(frozen=True)
class DofLayout:
    """Element-major, then variable (u1, u2, p), then row-major (eta, xi)."""

    n_elements: int
    W: int

    @property
    def n(self) -> int:
        return self.W + 1

    @property
    def block(self) -> int:
        return self.n * self.n

    @property
    def per_element(self) -> int:
        return 3 * self.block

    @property
    def size(self) -> int:
        return self.n_elements * self.per_element

    def element_slice(self, e: int) -> slice:
        return slice(e * self.per_element, (e + 1) * self.per_element)

    def var_slice(self, e: int, var: int | str) -> slice:
        v = VARIABLES.index(var) if isinstance(var, str) else var
        start = e * self.per_element + v * self.block
        return slice(start, start + self.block)

    def element_dofs(self, e: int) -> np.ndarray:
        s = self.element_slice(e)
        return np.arange(s.start, s.stop)


class NodalField:
    """Per-element (u1, u2, p) nodal grids backed by one flat vector."""

    def __init__(self, layout: DofLayout, values=None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.size)
        values = np.asarray(values, dtype=float)
        if values.shape != (layout.size,):
            raise ValueError(f"expected {layout.size} values, got {values.shape}")
        self.values = values

    def grid(self, e: int, var: int | str) -> np.ndarray:
        n = self.layout.n
        return self.values[self.layout.var_slice(e, var)].reshape(n, n)

    def set_grid(self, e: int, var: int | str, grid) -> None:
        self.values[self.layout.var_slice(e, var)] = np.asarray(grid, dtype=float).ravel()

    def copy(self) -> "NodalField":
        return NodalField(self.layout, self.values.copy())
