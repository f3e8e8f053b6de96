"""Least-squares functional for the Stokes interface problem.

The functional is a sum of squared, Gram-weighted residuals

    R(V) = sum_t (R_t V_t - d_t)^T G_t (R_t V_t - d_t)

where ``V_t`` gathers the degrees of freedom a term touches.  Terms are
element residuals of the momentum equation, H1 norms of the divergence,
inter-element jumps, interface jumps and boundary residuals.  The normal
equations ``A V = h`` are applied element by element from the local
operators; the global matrix is never formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import block_diag

from .basis import (
    DofLayout, NodalField, gauss_rule, gll_rule, l2_fit_matrix, lagrange_matrix,
    project_data, side_points, tensor_eval_matrix, tensor_grid_matrix,
)
from .geometry import Edge, ElementMap, Mesh, build_mesh, metric_at
from .sobolev import gram_h1_square, gram_hhalf_interval, gram_l2_interval

TERM_GROUPS = ("pde", "div", "interior", "interface", "boundary", "pin")


@dataclass
class ExactSolution:
    """Piecewise exact fields; ``sub`` is the subdomain index (1 or 2)."""

    u: Callable        # (x, y, sub) -> (2, ...)
    grad_u: Callable   # (x, y, sub) -> (2, 2, ...), [component, derivative]
    p: Callable        # (x, y, sub) -> (...)


@dataclass
class ProblemSpec:
    name: str
    geometry: str
    nu1: float
    nu2: float
    f: Callable                      # (x, y, sub) -> (2, ...)
    g: Callable                      # (x, y, nx, ny) -> (2, ...), stress jump on the interface
    dirichlet: Callable | None       # (x, y, sub) -> (2, ...)
    neumann: Callable | None = None  # (x, y, nx, ny, sub) -> (2, ...)
    neumann_marker: Callable | None = None  # (x, y) -> bool
    exact: ExactSolution | None = None

    def __post_init__(self):
        if not (self.nu1 > 0 and self.nu2 > 0):
            raise ValueError("viscosities must be positive")

    def nu(self, sub: int) -> float:
        return self.nu1 if sub == 1 else self.nu2

    def build_mesh(self) -> Mesh:
        return build_mesh(self.geometry, self.neumann_marker)


@dataclass
class Term:
    group: str
    dofs: np.ndarray
    R: np.ndarray
    G: np.ndarray
    d: np.ndarray
    label: str = ""

    def residual(self, v: np.ndarray) -> np.ndarray:
        return self.R @ v[self.dofs] - self.d

    def value(self, v: np.ndarray) -> float:
        r = self.residual(v)
        return float(r @ self.G @ r) if self.G.ndim == 2 else float(r @ (self.G * r))


class ElementOps:
    """Per-element evaluation operators built from the projected metric."""

    def __init__(self, emap: ElementMap, W: int, nu: float):
        self.emap = emap
        self.W = W
        self.nu = nu
        self.nodes = gll_rule(W).nodes
        self.metric = metric_at(emap, W)
        self.hat = {k: v.ravel() for k, v in self.metric.hat.items()}
        self.nb = (W + 1) ** 2

    def coeff(self, name: str, E00: np.ndarray) -> np.ndarray:
        return E00 @ self.hat[name]

    def derivative_ops(self, xi, eta, grid: bool = False) -> dict:
        make = tensor_grid_matrix if grid else tensor_eval_matrix
        return {(a, b): make(self.nodes, xi, eta, a, b) for a, b in ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))}

    def momentum_rows(self, ops: dict) -> np.ndarray:
        """Rows of the scaled, projected momentum operator at the points of ``ops``."""
        E00 = ops[0, 0]
        c = {k: self.coeff(k, E00)[:, None] for k in self.hat}
        lap = (c["lap_a"] * ops[2, 0] + c["lap_b"] * ops[1, 1] + c["lap_c"] * ops[0, 2]
               + c["lap_d"] * ops[1, 0] + c["lap_e"] * ops[0, 1])
        px = c["sj_xi_x"] * ops[1, 0] + c["sj_eta_x"] * ops[0, 1]
        py = c["sj_xi_y"] * ops[1, 0] + c["sj_eta_y"] * ops[0, 1]
        Z = np.zeros_like(lap)
        return np.block([[-self.nu * lap, Z, px], [Z, -self.nu * lap, py]])

    def divergence_rows(self, ops: dict) -> np.ndarray:
        E00 = ops[0, 0]
        c = {k: self.coeff(k, E00)[:, None] for k in ("sj_xi_x", "sj_eta_x", "sj_xi_y", "sj_eta_y")}
        dx = c["sj_xi_x"] * ops[1, 0] + c["sj_eta_x"] * ops[0, 1]
        dy = c["sj_xi_y"] * ops[1, 0] + c["sj_eta_y"] * ops[0, 1]
        # D u = -div u
        return -np.hstack([dx, dy, np.zeros_like(dx)])

    def side_ops(self, side: int, t: np.ndarray) -> dict:
        xi, eta = side_points(side, t)
        E00 = tensor_eval_matrix(self.nodes, xi, eta)
        E10 = tensor_eval_matrix(self.nodes, xi, eta, 1, 0)
        E01 = tensor_eval_matrix(self.nodes, xi, eta, 0, 1)
        xi_x, xi_y = self.coeff("xi_x", E00)[:, None], self.coeff("xi_y", E00)[:, None]
        eta_x, eta_y = self.coeff("eta_x", E00)[:, None], self.coeff("eta_y", E00)[:, None]
        return {
            "val": E00,
            "dx": xi_x * E10 + eta_x * E01,
            "dy": xi_y * E10 + eta_y * E01,
            "dt": E10 if side in (0, 2) else E01,
        }


def _var_block(rows: np.ndarray, var: int, nb: int) -> np.ndarray:
    """Embed rows acting on one variable into rows on the element's 3 variables."""
    out = np.zeros((rows.shape[0], 3 * nb))
    out[:, var * nb:(var + 1) * nb] = rows
    return out


def inverse_speed_hat(emap: ElementMap, side: int, W: int, t_eval: np.ndarray) -> np.ndarray:
    """Degree-W L2 fit of 1/|dM/dt| along a side, evaluated at ``t_eval``."""
    fine = gll_rule(W + 2).nodes
    tx, ty = emap.side_tangent(side, fine)
    coarse_vals = l2_fit_matrix(W, W + 3) @ (1.0 / np.hypot(tx, ty))
    return lagrange_matrix(gll_rule(W).nodes, t_eval) @ coarse_vals


class LeastSquaresFunctional:
    """All residual terms of the functional on one mesh at polynomial order W."""

    def __init__(self, mesh: Mesh, spec: ProblemSpec, W: int, pin: bool | None = None):
        if W < 1:
            raise ValueError("W must be at least 1")
        self.mesh = mesh
        self.spec = spec
        self.W = W
        self.layout = DofLayout(mesh.n_elements, W)
        self.ops = [ElementOps(e, W, spec.nu(e.subdomain)) for e in mesh.elements]
        if pin is None:
            pin = not mesh.edges_of_kind("boundary_neumann")
        self.pin = pin
        self.q = 2 * W  # representation degree of products and data
        self.edge_nodes = gll_rule(self.q).nodes
        self.terms: list[Term] = []
        for k in range(mesh.n_elements):
            self.terms.append(self._pde_term(k))
            self.terms.append(self._div_term(k))
        for edge in mesh.edges:
            self.terms.append(self._edge_term(edge))
        if pin:
            self.terms.append(self._pin_term())

    # -- element terms ---------------------------------------------------
    def _pde_term(self, k: int) -> Term:
        op = self.ops[k]
        xg, wg = gauss_rule(self.q + 1)
        ops = op.derivative_ops(xg, xg, grid=True)
        R = op.momentum_rows(ops)
        sub = op.emap.subdomain
        F = project_data(lambda x, y: self.spec.f(x, y, sub), op.emap, self.q)
        to_gauss = tensor_grid_matrix(gll_rule(self.q).nodes, xg, xg)
        d = np.concatenate([to_gauss @ F[0].ravel(), to_gauss @ F[1].ravel()])
        w2 = np.outer(wg, wg).ravel()
        return Term("pde", self.layout.element_dofs(k), R, np.tile(w2, 2), d, f"pde[{k}]")

    def _div_term(self, k: int) -> Term:
        op = self.ops[k]
        nq = gll_rule(self.q).nodes
        ops = op.derivative_ops(nq, nq, grid=True)
        R = op.divergence_rows(ops)
        G = gram_h1_square(self.q).matrix
        return Term("div", self.layout.element_dofs(k), R, G, np.zeros(R.shape[0]), f"div[{k}]")

    def _pin_term(self) -> Term:
        dof = self.layout.var_slice(0, "p").start
        return Term("pin", np.array([dof]), np.ones((1, 1)), np.ones(1), np.zeros(1), "pin")

    # -- edge terms ------------------------------------------------------
    def _side_rows(self, k: int, side: int, flip: bool) -> dict:
        """Edge-point rows of one element in the edge's common direction."""
        t = -self.edge_nodes if flip else self.edge_nodes
        s = self.ops[k].side_ops(side, t)
        if flip:
            s["dt"] = -s["dt"]
        return s

    def _edge_geometry(self, edge: Edge):
        emap = self.mesh.elements[edge.elem_a]
        t = self.edge_nodes
        x, y = emap.side_trace(edge.side_a, t)
        nx, ny = emap.outward_normal(edge.side_a, t)
        h = inverse_speed_hat(emap, edge.side_a, self.W, t)
        return x, y, nx, ny, h

    def _stress_rows(self, s: dict, nu: float, nx, ny) -> list[np.ndarray]:
        nb = self.ops[0].nb
        nxc, nyc = nx[:, None], ny[:, None]
        r1 = (_var_block(nu * (s["dx"] * nxc + s["dy"] * nyc), 0, nb)
              + _var_block(-s["val"] * nxc, 2, nb))
        r2 = (_var_block(nu * (s["dx"] * nxc + s["dy"] * nyc), 1, nb)
              + _var_block(-s["val"] * nyc, 2, nb))
        return [r1, r2]

    def _edge_term(self, edge: Edge) -> Term:
        nb = self.ops[0].nb
        q = self.q
        L2 = gram_l2_interval(q).matrix
        HH = gram_hhalf_interval(q).matrix
        x, y, nx, ny, h = self._edge_geometry(edge)
        hc = h[:, None]
        a = self._side_rows(edge.elem_a, edge.side_a, False)
        rows, grams, data = [], [], []

        def add(r, G, d=None):
            rows.append(r)
            grams.append(G)
            data.append(np.zeros(r.shape[0]) if d is None else d)

        if edge.shared:
            b = self._side_rows(edge.elem_b, edge.side_b, edge.flip)

            def jump(key, var, scale=None):
                ra = _var_block(a[key] if scale is None else scale * a[key], var, nb)
                rb = _var_block(b[key] if scale is None else scale * b[key], var, nb)
                return np.hstack([ra, -rb])

            dofs = np.concatenate([self.layout.element_dofs(edge.elem_a), self.layout.element_dofs(edge.elem_b)])
            if edge.kind in ("interior1", "interior2"):
                group = "interior"
                for var in (0, 1):
                    add(jump("val", var), L2)
                for var in (0, 1):
                    add(jump("dx", var), HH)
                    add(jump("dy", var), HH)
                add(jump("val", 2), HH)
            elif edge.kind == "interface":
                group = "interface"
                for var in (0, 1):
                    add(jump("val", var), L2)
                for var in (0, 1):
                    add(jump("dt", var, hc), HH)
                nu_a = self.spec.nu(self.mesh.elements[edge.elem_a].subdomain)
                nu_b = self.spec.nu(self.mesh.elements[edge.elem_b].subdomain)
                sa = self._stress_rows(a, nu_a, nx, ny)
                sb = self._stress_rows(b, nu_b, nx, ny)
                gvals = np.asarray(self.spec.g(x, y, nx, ny), dtype=float)
                gvals = np.broadcast_to(gvals, (2, len(x)))
                for c in (0, 1):
                    add(np.hstack([sa[c], -sb[c]]), HH, gvals[c])
            else:
                raise ValueError(f"shared edge with kind {edge.kind!r}")
        else:
            group = "boundary"
            dofs = self.layout.element_dofs(edge.elem_a)
            sub = self.mesh.elements[edge.elem_a].subdomain
            if edge.kind == "boundary_dirichlet":
                if self.spec.dirichlet is None:
                    raise ValueError("Dirichlet edge but the problem has no Dirichlet data")
                uD = np.broadcast_to(np.asarray(self.spec.dirichlet(x, y, sub), dtype=float), (2, len(x)))
                Dq = gll_rule(q).diff_matrix
                for var in (0, 1):
                    add(_var_block(a["val"], var, nb), L2, uD[var])
                for var in (0, 1):
                    add(_var_block(hc * a["dt"], var, nb), HH, h * (Dq @ uD[var]))
            elif edge.kind == "boundary_neumann":
                if self.spec.neumann is None:
                    raise ValueError("Neumann edge but the problem has no Neumann data")
                hN = np.broadcast_to(np.asarray(self.spec.neumann(x, y, nx, ny, sub), dtype=float), (2, len(x)))
                for c, r in enumerate(self._stress_rows(a, self.spec.nu(sub), nx, ny)):
                    add(r, HH, hN[c])
            else:
                raise ValueError(f"unknown boundary kind {edge.kind!r}")
        label = f"{edge.kind}[{edge.elem_a}:{edge.side_a}" + (f"|{edge.elem_b}:{edge.side_b}]" if edge.shared else "]")
        return Term(group, dofs, np.vstack(rows), block_diag(*grams), np.concatenate(data), label)

    # -- evaluation ------------------------------------------------------
    def value(self, V) -> float:
        v = V.values if isinstance(V, NodalField) else np.asarray(V, dtype=float)
        return float(sum(t.value(v) for t in self.terms))

    def breakdown(self, V) -> dict:
        v = V.values if isinstance(V, NodalField) else np.asarray(V, dtype=float)
        out = {g: 0.0 for g in TERM_GROUPS}
        for t in self.terms:
            out[t.group] += t.value(v)
        return out

    def terms_of(self, group: str) -> list[Term]:
        return [t for t in self.terms if t.group == group]

    def normal_system(self) -> "NormalSystem":
        return NormalSystem.from_terms(self.layout.size, self.terms)


@dataclass
class _Block:
    dofs: np.ndarray
    K: np.ndarray


@dataclass
class NormalSystem:
    """Element-by-element action of A and the right-hand side h.

    R(V) = V^T A V - 2 h^T V + offset.
    """

    n: int
    blocks: list = field(default_factory=list)
    rhs: np.ndarray | None = None
    offset: float = 0.0

    @classmethod
    def from_terms(cls, n: int, terms: list[Term]) -> "NormalSystem":
        merged: dict[tuple, np.ndarray] = {}
        order: list[tuple] = []
        h = np.zeros(n)
        offset = 0.0
        for t in terms:
            GR = t.G @ t.R if t.G.ndim == 2 else t.G[:, None] * t.R
            K = t.R.T @ GR
            key = tuple(t.dofs)
            if key not in merged:
                merged[key] = np.zeros_like(K)
                order.append(key)
            merged[key] += K
            Gd = t.G @ t.d if t.G.ndim == 2 else t.G * t.d
            np.add.at(h, t.dofs, t.R.T @ Gd)
            offset += float(t.d @ Gd)
        blocks = [_Block(np.array(k), 0.5 * (merged[k] + merged[k].T)) for k in order]
        return cls(n, blocks, h, offset)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        for b in self.blocks:
            out[b.dofs] += b.K @ v[b.dofs]
        return out

    __call__ = apply

    def quadratic(self, v: np.ndarray) -> float:
        return float(v @ self.apply(v) - 2 * self.rhs @ v + self.offset)

    def dense(self) -> np.ndarray:
        """Dense A, for small diagnostics only."""
        A = np.zeros((self.n, self.n))
        for b in self.blocks:
            A[np.ix_(b.dofs, b.dofs)] += b.K
        return A


def assemble_normal_system(mesh: Mesh, spec: ProblemSpec, W: int, pin: bool | None = None) -> NormalSystem:
    return LeastSquaresFunctional(mesh, spec, W, pin).normal_system()


def evaluate_functional(mesh: Mesh, spec: ProblemSpec, V, W: int | None = None, pin: bool | None = None) -> float:
    if W is None:
        W = V.layout.W
    return LeastSquaresFunctional(mesh, spec, W, pin).value(V)


def pin_point(mesh: Mesh) -> tuple[float, float]:
    """Physical location of the pressure gauge node (first GLL node of element 0)."""
    x, y = mesh.elements[0].eval(np.array(-1.0), np.array(-1.0))
    return float(x), float(y)


def interpolate_exact(functional: LeastSquaresFunctional, gauge: bool | None = None) -> NodalField:
    """GLL interpolant of the exact solution.

    With ``gauge`` (default: whenever the pressure is pinned) the pressure is
    shifted to vanish at the pin point.
    """
    spec = functional.spec
    if spec.exact is None:
        raise ValueError("problem has no exact solution")
    field_ = NodalField(functional.layout)
    nodes = gll_rule(functional.W).nodes
    XI, ETA = np.meshgrid(nodes, nodes)
    for k, emap in enumerate(functional.mesh.elements):
        x, y = emap.eval(XI, ETA)
        u = np.broadcast_to(spec.exact.u(x, y, emap.subdomain), (2,) + x.shape)
        field_.set_grid(k, "u1", u[0])
        field_.set_grid(k, "u2", u[1])
        field_.set_grid(k, "p", np.broadcast_to(spec.exact.p(x, y, emap.subdomain), x.shape))
    if gauge is None:
        gauge = functional.pin
    if gauge:
        x0, y0 = pin_point(functional.mesh)
        shift = float(spec.exact.p(np.array(x0), np.array(y0), functional.mesh.elements[0].subdomain))
        for k in range(functional.layout.n_elements):
            field_.set_grid(k, "p", field_.grid(k, "p") - shift)
    return field_
