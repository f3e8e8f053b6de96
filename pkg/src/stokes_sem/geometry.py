"""Curvilinear quadrilateral meshes fitted to the interface.

Elements are described by four boundary curves traversed counter-clockwise
(bottom, right, top, left) and mapped from S = (-1, 1)^2 by transfinite
(Gordon-Hall) blending.  Local sides are numbered 0: eta=-1, 1: xi=+1,
2: eta=+1, 3: xi=-1 and each is parametrised by increasing xi or eta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import gll_rule, l2_fit_matrix, side_points

CORNER_TOL = 1e-12
EDGE_TOL = 1e-10
MAX_ASPECT = 100.0
MAX_JACOBIAN_RATIO = 1e6

EDGE_KINDS = ("interior1", "interior2", "interface", "boundary_dirichlet", "boundary_neumann")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ParamCurve:
    """Regular curve t -> (x, y) on [-1, 1]."""

    eval: Callable
    deriv: Callable
    deriv2: Callable | None = None

    def __call__(self, t):
        return self.eval(np.asarray(t, dtype=float))

    def second(self, t):
        t = np.asarray(t, dtype=float)
        if self.deriv2 is not None:
            return self.deriv2(t)
        # fourth-order central difference of the first derivative
        h = 1e-3
        d = [np.asarray(self.deriv(t + k * h)) for k in (-2, -1, 1, 2)]
        return tuple((d[0][c] - 8 * d[1][c] + 8 * d[2][c] - d[3][c]) / (12 * h) for c in range(2))

    def reversed(self) -> "ParamCurve":
        d2 = None if self.deriv2 is None else (lambda t: self.deriv2(-t))
        return ParamCurve(
            lambda t: self.eval(-t),
            lambda t: tuple(-c for c in self.deriv(-t)),
            d2,
        )

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.eval(np.array([-1.0, 1.0]))
        return np.array([x[0], y[0]]), np.array([x[1], y[1]])


def segment(p0, p1) -> ParamCurve:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    mid = 0.5 * (p0 + p1)
    half = 0.5 * (p1 - p0)

    def ev(t):
        t = np.asarray(t, dtype=float)
        return mid[0] + half[0] * t, mid[1] + half[1] * t

    def d1(t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, half[0]), np.full_like(t, half[1])

    def d2(t):
        t = np.asarray(t, dtype=float)
        return np.zeros_like(t), np.zeros_like(t)

    return ParamCurve(ev, d1, d2)


def arc(center, radius: float, theta0: float, theta1: float) -> ParamCurve:
    """Circular arc from angle theta0 (t=-1) to theta1 (t=+1)."""
    cx, cy = map(float, center)
    tm = 0.5 * (theta0 + theta1)
    th = 0.5 * (theta1 - theta0)

    def ev(t):
        a = tm + th * np.asarray(t, dtype=float)
        return cx + radius * np.cos(a), cy + radius * np.sin(a)

    def d1(t):
        a = tm + th * np.asarray(t, dtype=float)
        return -radius * th * np.sin(a), radius * th * np.cos(a)

    def d2(t):
        a = tm + th * np.asarray(t, dtype=float)
        return -radius * th * th * np.cos(a), -radius * th * th * np.sin(a)

    return ParamCurve(ev, d1, d2)


class ElementMap:
    """Transfinite blending map from the reference square onto one element."""

    def __init__(self, sides: Sequence[ParamCurve], subdomain: int = 1):
        if len(sides) != 4:
            raise GeometryError("an element needs exactly four sides")
        if subdomain not in (1, 2):
            raise GeometryError(f"subdomain must be 1 or 2, got {subdomain}")
        self.sides = tuple(sides)
        self.subdomain = subdomain
        # bottom(xi), right(eta), top(xi), left(eta) in increasing reference coordinate
        self.bottom = sides[0]
        self.right = sides[1]
        self.top = sides[2].reversed()
        self.left = sides[3].reversed()
        ends = [c.endpoints() for c in sides]
        for k in range(4):
            gap = np.linalg.norm(ends[k][1] - ends[(k + 1) % 4][0])
            scale = max(1.0, np.linalg.norm(ends[k][1]))
            if gap > CORNER_TOL * scale:
                raise GeometryError(f"corner mismatch {gap:.3e} between sides {k} and {(k + 1) % 4}")
        # corners P00, P10, P11, P01
        self.corners = np.array([ends[0][0], ends[1][0], ends[2][0], ends[3][0]])

    def eval(self, xi, eta):
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        bx, by = self.bottom(xi)
        tx, ty = self.top(xi)
        lx, ly = self.left(eta)
        rx, ry = self.right(eta)
        P = self.corners
        wts = (
            (1 - xi) * (1 - eta) / 4,
            (1 + xi) * (1 - eta) / 4,
            (1 + xi) * (1 + eta) / 4,
            (1 - xi) * (1 + eta) / 4,
        )
        out = []
        for c, (b, t, l, r) in enumerate(((bx, tx, lx, rx), (by, ty, ly, ry))):
            corner = sum(w * P[k, c] for k, w in enumerate(wts))
            out.append((1 - eta) / 2 * b + (1 + eta) / 2 * t + (1 - xi) / 2 * l + (1 + xi) / 2 * r - corner)
        return out[0], out[1]

    def derivatives(self, xi, eta):
        """First derivatives ((x_xi, x_eta), (y_xi, y_eta)) of the map."""
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        B, T = self.bottom(xi), self.top(xi)
        L, R = self.left(eta), self.right(eta)
        dB, dT = self.bottom.deriv(xi), self.top.deriv(xi)
        dL, dR = self.left.deriv(eta), self.right.deriv(eta)
        P = self.corners
        res = []
        for c in range(2):
            d_xi = ((1 - eta) / 2 * dB[c] + (1 + eta) / 2 * dT[c] - L[c] / 2 + R[c] / 2
                    - (-(1 - eta) * P[0, c] + (1 - eta) * P[1, c] + (1 + eta) * P[2, c] - (1 + eta) * P[3, c]) / 4)
            d_eta = (-B[c] / 2 + T[c] / 2 + (1 - xi) / 2 * dL[c] + (1 + xi) / 2 * dR[c]
                     - (-(1 - xi) * P[0, c] - (1 + xi) * P[1, c] + (1 + xi) * P[2, c] + (1 - xi) * P[3, c]) / 4)
            res.append((d_xi, d_eta))
        return tuple(res)

    def second_derivatives(self, xi, eta):
        """((x_xixi, x_xieta, x_etaeta), (y_xixi, y_xieta, y_etaeta))."""
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        dB, dT = self.bottom.deriv(xi), self.top.deriv(xi)
        dL, dR = self.left.deriv(eta), self.right.deriv(eta)
        ddB, ddT = self.bottom.second(xi), self.top.second(xi)
        ddL, ddR = self.left.second(eta), self.right.second(eta)
        P = self.corners
        res = []
        for c in range(2):
            xx = (1 - eta) / 2 * ddB[c] + (1 + eta) / 2 * ddT[c]
            yy = (1 - xi) / 2 * ddL[c] + (1 + xi) / 2 * ddR[c]
            xy = (-dB[c] + dT[c] - dL[c] + dR[c]) / 2 - (P[0, c] - P[1, c] + P[2, c] - P[3, c]) / 4
            res.append((xx, xy, yy))
        return tuple(res)

    def jacobian(self, xi, eta):
        (x_xi, x_eta), (y_xi, y_eta) = self.derivatives(xi, eta)
        return x_xi * y_eta - x_eta * y_xi

    def inverse_metric(self, xi, eta):
        """Exact (xi_x, xi_y, eta_x, eta_y, J) at reference points."""
        (x_xi, x_eta), (y_xi, y_eta) = self.derivatives(xi, eta)
        J = x_xi * y_eta - x_eta * y_xi
        if np.any(J <= 0):
            raise GeometryError("non-positive Jacobian encountered")
        return y_eta / J, -x_eta / J, -y_xi / J, x_xi / J, J

    def laplacian_of_coordinates(self, xi, eta):
        """Exact (Lap xi, Lap eta) in physical coordinates at reference points."""
        (x_xi, x_eta), (y_xi, y_eta) = self.derivatives(xi, eta)
        (x_aa, x_ab, x_bb), (y_aa, y_ab, y_bb) = self.second_derivatives(xi, eta)
        J = x_xi * y_eta - x_eta * y_xi
        G = np.array([[y_eta, -x_eta], [-y_xi, x_xi]]) / J
        F_xi = np.array([[x_aa, x_ab], [y_aa, y_ab]])
        F_eta = np.array([[x_ab, x_bb], [y_ab, y_bb]])
        # dG/dxi = -G F_xi G
        dG_xi = -np.einsum("ij...,jk...,kl...->il...", G, F_xi, G)
        dG_eta = -np.einsum("ij...,jk...,kl...->il...", G, F_eta, G)
        dG_x = G[0, 0] * dG_xi + G[1, 0] * dG_eta
        dG_y = G[0, 1] * dG_xi + G[1, 1] * dG_eta
        lap_xi = dG_x[0, 0] + dG_y[0, 1]
        lap_eta = dG_x[1, 0] + dG_y[1, 1]
        return lap_xi, lap_eta

    def side_trace(self, side: int, t):
        return self.eval(*side_points(side, t))

    def side_tangent(self, side: int, t):
        """dM/dt along a local side in its natural parameter."""
        (x_xi, x_eta), (y_xi, y_eta) = self.derivatives(*side_points(side, t))
        if side in (0, 2):
            return x_xi, y_xi
        return x_eta, y_eta

    def outward_normal(self, side: int, t):
        tx, ty = self.side_tangent(side, t)
        norm = np.hypot(tx, ty)
        if side in (0, 1):
            return ty / norm, -tx / norm
        return -ty / norm, tx / norm


def build_transfinite_map(sides: Sequence[ParamCurve], subdomain: int = 1, check_points: int = 12) -> ElementMap:
    """Blend four counter-clockwise sides into an element map and validate it."""
    emap = ElementMap(sides, subdomain)
    nodes = gll_rule(check_points - 1).nodes
    XI, ETA = np.meshgrid(nodes, nodes)
    J = emap.jacobian(XI, ETA)
    if np.any(J <= 0):
        raise GeometryError("degenerate element map: non-positive Jacobian")
    if J.max() / J.min() > MAX_JACOBIAN_RATIO:
        raise GeometryError("element Jacobian varies by more than the allowed factor")
    lengths = [side_length(c) for c in sides]
    if max(lengths) / min(lengths) > MAX_ASPECT:
        raise GeometryError("element aspect ratio exceeds the allowed bound")
    return emap


def side_length(curve: ParamCurve, n: int = 16) -> float:
    from .basis import gauss_rule

    t, w = gauss_rule(n)
    dx, dy = curve.deriv(np.asarray(t))
    return float(np.sum(w * np.hypot(dx, dy)))


# names of the degree-W projected coefficients kept per element
HAT_NAMES = (
    "xi_x", "xi_y", "eta_x", "eta_y",
    "sj_xi_x", "sj_xi_y", "sj_eta_x", "sj_eta_y",
    "lap_a", "lap_b", "lap_c", "lap_d", "lap_e",
)


@dataclass
class MetricData:
    """Exact metric on the (W+3)^2 GLL grid plus degree-W projections."""

    W: int
    nodes: np.ndarray
    J: np.ndarray
    xi_x: np.ndarray
    xi_y: np.ndarray
    eta_x: np.ndarray
    eta_y: np.ndarray
    hat: dict = field(default_factory=dict)


def metric_at(emap: ElementMap, W: int) -> MetricData:
    """Metric terms on the (W+3)^2 GLL grid and their degree-W L2 fits.

    The projected Laplacian coefficients are those of
    sqrt(J) * Lap(u) = a u_xixi + b u_xieta + c u_etaeta + d u_xi + e u_eta.
    """
    n_fine = W + 3
    nodes = gll_rule(n_fine - 1).nodes
    XI, ETA = np.meshgrid(nodes, nodes)
    xi_x, xi_y, eta_x, eta_y, J = emap.inverse_metric(XI, ETA)
    lap_xi, lap_eta = emap.laplacian_of_coordinates(XI, ETA)
    sj = np.sqrt(J)
    exact = {
        "xi_x": xi_x, "xi_y": xi_y, "eta_x": eta_x, "eta_y": eta_y,
        "sj_xi_x": sj * xi_x, "sj_xi_y": sj * xi_y, "sj_eta_x": sj * eta_x, "sj_eta_y": sj * eta_y,
        "lap_a": sj * (xi_x**2 + xi_y**2),
        "lap_b": 2 * sj * (xi_x * eta_x + xi_y * eta_y),
        "lap_c": sj * (eta_x**2 + eta_y**2),
        "lap_d": sj * lap_xi,
        "lap_e": sj * lap_eta,
    }
    P = l2_fit_matrix(W, n_fine)
    hat = {k: P @ v @ P.T for k, v in exact.items()}
    return MetricData(W, nodes, J, xi_x, xi_y, eta_x, eta_y, hat)


@dataclass(frozen=True)
class Edge:
    kind: str
    elem_a: int
    side_a: int
    elem_b: int | None = None
    side_b: int | None = None
    flip: bool = False

    @property
    def shared(self) -> bool:
        return self.elem_b is not None


@dataclass
class Mesh:
    elements: list
    edges: list
    name: str = "custom"

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def subdomain_elements(self, i: int) -> list[int]:
        return [k for k, e in enumerate(self.elements) if e.subdomain == i]

    def edges_of_kind(self, kind: str) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]


def _trace_samples(emap: ElementMap, side: int, n: int) -> np.ndarray:
    t = np.linspace(-1.0, 1.0, n)
    x, y = emap.side_trace(side, t)
    return np.stack([x, y], axis=1)


def _classify_edges(elements: list[ElementMap], neumann: Callable | None) -> list[Edge]:
    n_s = 9
    samples = {(k, s): _trace_samples(e, s, n_s) for k, e in enumerate(elements) for s in range(4)}
    scale = max(np.abs(np.concatenate(list(samples.values()))).max(), 1.0)
    tol = EDGE_TOL * scale
    used = set()
    edges = []
    keys = list(samples)
    for ia, ka in enumerate(keys):
        if ka in used:
            continue
        match = None
        for kb in keys[ia + 1:]:
            if kb in used or kb[0] == ka[0]:
                continue
            a, b = samples[ka], samples[kb]
            if np.max(np.abs(a - b)) < tol:
                match = (kb, False)
            elif np.max(np.abs(a - b[::-1])) < tol:
                match = (kb, True)
            elif (np.min(np.linalg.norm(a[:, None] - b[None], axis=2), axis=1) < tol).sum() >= 2 and \
                    np.linalg.norm(a[0] - a[-1]) > tol:
                raise GeometryError(f"non-matching shared edge between {ka} and {kb}")
            if match:
                break
        if match is None:
            pts = samples[ka]
            kind = "boundary_dirichlet"
            if neumann is not None and bool(np.all(neumann(pts[:, 0], pts[:, 1]))):
                kind = "boundary_neumann"
            edges.append(Edge(kind, ka[0], ka[1]))
            used.add(ka)
            continue
        kb, flip = match
        used.update((ka, kb))
        sa, sb = elements[ka[0]].subdomain, elements[kb[0]].subdomain
        if sa == sb:
            edges.append(Edge(f"interior{sa}", ka[0], ka[1], kb[0], kb[1], flip))
        else:
            # element A of an interface edge always lies in subdomain 1
            if sa == 2:
                ka, kb = kb, ka
            edges.append(Edge("interface", ka[0], ka[1], kb[0], kb[1], flip))
    _check_shared_edges(elements, edges)
    _check_hanging_nodes(elements)
    return edges


def _check_shared_edges(elements, edges, n: int = 50) -> None:
    for e in edges:
        if not e.shared:
            continue
        a = _trace_samples(elements[e.elem_a], e.side_a, n)
        b = _trace_samples(elements[e.elem_b], e.side_b, n)
        if e.flip:
            b = b[::-1]
        if np.max(np.abs(a - b)) > EDGE_TOL * max(1.0, np.abs(a).max()):
            raise GeometryError(f"shared edge traces disagree: {e}")
        if e.kind == "interface" and elements[e.elem_a].subdomain == elements[e.elem_b].subdomain:
            raise GeometryError("interface edge joins elements of the same subdomain")


def _check_hanging_nodes(elements, n: int = 401) -> None:
    corners = np.concatenate([e.corners for e in elements])
    t = np.linspace(-1.0, 1.0, n)
    for emap in elements:
        for s in range(4):
            x, y = emap.side_trace(s, t)
            pts = np.stack([x, y], axis=1)
            length = np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))
            d = np.linalg.norm(pts[None, :, :] - corners[:, None, :], axis=2)
            near = d.min(axis=1) < 1e-6 * length
            at_end = np.minimum(np.linalg.norm(corners - pts[0], axis=1),
                                np.linalg.norm(corners - pts[-1], axis=1)) < 1e-9 * max(length, 1.0)
            if np.any(near & ~at_end):
                raise GeometryError("hanging node detected: a corner lies inside another element's side")


def mesh_from_elements(element_sides: Sequence[tuple[Sequence[ParamCurve], int]],
                       neumann: Callable | None = None, name: str = "custom") -> Mesh:
    """Build a mesh from (four CCW sides, subdomain) pairs.

    ``neumann(x, y)`` marks boundary edges on which every sample point
    returns True as Neumann edges; all other boundary edges are Dirichlet.
    """
    elements = [build_transfinite_map(sides, sub) for sides, sub in element_sides]
    edges = _classify_edges(elements, neumann)
    return Mesh(elements, edges, name)


def _quad(p0, p1, p2, p3, curves=None):
    """Four CCW sides through the given corners; ``curves`` overrides sides by index."""
    pts = [p0, p1, p2, p3]
    sides = [segment(pts[k], pts[(k + 1) % 4]) for k in range(4)]
    for k, c in (curves or {}).items():
        sides[k] = c
    return sides


def split_square_recipe():
    """[0,1]^2 split by y = 0.5 into 2 + 2 squares; subdomain 1 is y < 0.5."""
    out = []
    for (y0, y1), sub in (((0.0, 0.5), 1), ((0.5, 1.0), 2)):
        for x0, x1 in ((0.0, 0.5), (0.5, 1.0)):
            out.append((_quad((x0, y0), (x1, y0), (x1, y1), (x0, y1)), sub))
    return out


def quarter_annulus_recipe(r_in=1.0, r_mid=1.5, r_out=2.0):
    """Quarter annulus split at r = r_mid and theta = pi/4; subdomain 1 is r < r_mid."""
    out = []
    for (ra, rb), sub in (((r_in, r_mid), 1), ((r_mid, r_out), 2)):
        for ta, tb in ((0.0, math.pi / 4), (math.pi / 4, math.pi / 2)):
            p0 = (ra * math.cos(ta), ra * math.sin(ta))
            p1 = (rb * math.cos(ta), rb * math.sin(ta))
            p2 = (rb * math.cos(tb), rb * math.sin(tb))
            p3 = (ra * math.cos(tb), ra * math.sin(tb))
            sides = [segment(p0, p1), arc((0, 0), rb, ta, tb), segment(p2, p3), arc((0, 0), ra, tb, ta)]
            out.append((sides, sub))
    return out


def circle_in_square_recipe(radius=0.5, half_width=1.0, inner=0.15, inner_radius=0.5):
    """Nine elements: central element and four ring elements inside the circle, four outside.

    The central element has corners (+-inner, +-inner).  Its sides are straight
    when ``inner_radius`` is None, otherwise arcs of that radius bulging outwards.
    """
    out = []
    c = (0.0, 0.0)
    inner_sides = []
    for k in range(4):
        a0 = -math.pi / 4 + k * math.pi / 2
        a1 = a0 + math.pi / 2
        rot = lambda v, a=k * math.pi / 2: (v[0] * math.cos(a) - v[1] * math.sin(a),
                                             v[0] * math.sin(a) + v[1] * math.cos(a))
        q0, q1 = rot((inner, -inner)), rot((inner, inner))
        if inner_radius is None:
            inner_side = segment(q0, q1)
        else:
            if inner_radius < inner * math.sqrt(2):
                raise GeometryError("inner_radius too small for the central element corners")
            d = math.sqrt(inner_radius**2 - inner**2)
            centre = rot((inner - d, 0.0))
            half = math.atan2(inner, d)
            base = k * math.pi / 2
            inner_side = arc(centre, inner_radius, base - half, base + half)
        inner_sides.append(inner_side)
        c0 = (radius * math.cos(a0), radius * math.sin(a0))
        c1 = (radius * math.cos(a1), radius * math.sin(a1))
        o0, o1 = rot((half_width, -half_width)), rot((half_width, half_width))
        # ring element: central side -> circle arc
        out.append(([segment(q0, c0), arc(c, radius, a0, a1), segment(c1, q1), inner_side.reversed()], 1))
        # outer element: circle arc -> square boundary
        out.append(([segment(c0, o0), segment(o0, o1), segment(o1, c1), arc(c, radius, a1, a0)], 2))
    # central element sides in CCW order: bottom, right, top, left
    central = [inner_sides[3], inner_sides[0], inner_sides[1], inner_sides[2]]
    out.insert(0, (central, 1))
    return out


RECIPES = {
    "split_square": split_square_recipe,
    "quarter_annulus": quarter_annulus_recipe,
    "circle_in_square": circle_in_square_recipe,
}


def build_mesh(recipe, neumann: Callable | None = None) -> Mesh:
    """Build a mesh from a recipe name or an explicit list of (sides, subdomain)."""
    if isinstance(recipe, str):
        if recipe not in RECIPES:
            raise GeometryError(f"unknown mesh recipe {recipe!r}")
        return mesh_from_elements(RECIPES[recipe](), neumann, recipe)
    return mesh_from_elements(recipe, neumann)
