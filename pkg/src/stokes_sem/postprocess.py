"""Conforming velocity correction, error norms and convergence tables."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .basis import NodalField, gauss_rule, gll_rule, tensor_grid_matrix
from .functional import ProblemSpec, pin_point
from .geometry import Mesh

log = logging.getLogger(__name__)

COINCIDENCE_TOL = 1e-9


def _perimeter_mask(n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m.ravel()


def shared_node_groups(mesh: Mesh, W: int) -> list[np.ndarray]:
    """Groups of (element, local node) pairs that sit at the same physical point.

    Each group is an array of flat indices ``element * (W+1)^2 + local``;
    only groups with more than one member are returned.
    """
    n = W + 1
    nodes = gll_rule(W).nodes
    XI, ETA = np.meshgrid(nodes, nodes)
    mask = _perimeter_mask(n)
    local = np.flatnonzero(mask)
    pts, ids = [], []
    for k, emap in enumerate(mesh.elements):
        x, y = emap.eval(XI.ravel()[mask], ETA.ravel()[mask])
        pts.append(np.column_stack([x, y]))
        ids.append(k * n * n + local)
    pts = np.vstack(pts)
    ids = np.concatenate(ids)
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1.0)
    pairs = cKDTree(pts).query_pairs(COINCIDENCE_TOL * scale, output_type="ndarray")
    if len(pairs) == 0:
        return []
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts), len(pts)))
    n_comp, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    return [ids[g] for g in np.split(order, splits) if len(g) > 1]


def make_conforming(field_: NodalField, mesh: Mesh) -> NodalField:
    """Average each velocity component over all element nodes sharing a point.

    Interior nodes and the pressure are left untouched.
    """
    lay = field_.layout
    out = field_.copy()
    nb = lay.block
    for group in shared_node_groups(mesh, lay.W):
        elem, loc = np.divmod(group, nb)
        for var in (0, 1):
            idx = elem * lay.per_element + var * nb + loc
            out.values[idx] = out.values[idx].mean()
    return out


@dataclass
class ErrorReport:
    W: int
    E_u: float
    E_p: float
    E_c: float
    E_c_raw: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("E_u", "E_p", "E_c", "E_c_raw"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def _element_quadrature(W: int, extra: int = 6):
    x, w = gauss_rule(2 * W + extra)
    XI, ETA = np.meshgrid(x, x)
    return XI.ravel(), ETA.ravel(), np.outer(w, w).ravel(), x


def _divergence_norm(field_: NodalField, mesh: Mesh, quad) -> float:
    W = field_.layout.W
    nodes = gll_rule(W).nodes
    xi, eta, wq, x1 = quad
    Dx = tensor_grid_matrix(nodes, x1, x1, dxi=1)
    De = tensor_grid_matrix(nodes, x1, x1, deta=1)
    total = 0.0
    for k, emap in enumerate(mesh.elements):
        xi_x, xi_y, eta_x, eta_y, J = emap.inverse_metric(xi, eta)
        u1 = field_.grid(k, 0).ravel()
        u2 = field_.grid(k, 1).ravel()
        div = xi_x * (Dx @ u1) + eta_x * (De @ u1) + xi_y * (Dx @ u2) + eta_y * (De @ u2)
        total += float(np.sum(wq * J * div**2))
    return float(np.sqrt(total))


def compute_errors(field_: NodalField, spec: ProblemSpec, mesh: Mesh, pinned: bool = True,
                   raw: NodalField | None = None) -> ErrorReport:
    """Relative H1 velocity error, relative L2 pressure error and divergence norm.

    ``field_`` should already be conforming; ``raw`` (the uncorrected
    solution) only feeds the logged pre-correction divergence.  With
    ``pinned`` both pressures are shifted to vanish at the pin point.
    """
    if spec.exact is None:
        raise ValueError(f"problem {spec.name!r} has no exact solution")
    lay = field_.layout
    W = lay.W
    nodes = gll_rule(W).nodes
    quad = _element_quadrature(W)
    xi, eta, wq, x1 = quad
    E = tensor_grid_matrix(nodes, x1, x1)
    Dx = tensor_grid_matrix(nodes, x1, x1, dxi=1)
    De = tensor_grid_matrix(nodes, x1, x1, deta=1)

    p_shift_exact = p_shift_h = 0.0
    if pinned:
        x0, y0 = pin_point(mesh)
        p_shift_exact = float(spec.exact.p(np.array(x0), np.array(y0), mesh.elements[0].subdomain))
        p_shift_h = float(field_.grid(0, 2)[0, 0])

    eu = nu = ep = np_ = 0.0
    for k, emap in enumerate(mesh.elements):
        sub = emap.subdomain
        xi_x, xi_y, eta_x, eta_y, J = emap.inverse_metric(xi, eta)
        wJ = wq * J
        x, y = emap.eval(xi, eta)
        u_ex = np.broadcast_to(spec.exact.u(x, y, sub), (2,) + x.shape)
        g_ex = np.broadcast_to(spec.exact.grad_u(x, y, sub), (2, 2) + x.shape)
        for c in (0, 1):
            v = field_.grid(k, c).ravel()
            vx, ve = Dx @ v, De @ v
            du = u_ex[c] - E @ v
            dgx = g_ex[c, 0] - (xi_x * vx + eta_x * ve)
            dgy = g_ex[c, 1] - (xi_y * vx + eta_y * ve)
            eu += float(np.sum(wJ * (du**2 + dgx**2 + dgy**2)))
            nu += float(np.sum(wJ * (u_ex[c] ** 2 + g_ex[c, 0] ** 2 + g_ex[c, 1] ** 2)))
        p_ex = np.broadcast_to(spec.exact.p(x, y, sub), x.shape) - p_shift_exact
        p_h = E @ field_.grid(k, 2).ravel() - p_shift_h
        ep += float(np.sum(wJ * (p_ex - p_h) ** 2))
        np_ += float(np.sum(wJ * p_ex**2))

    E_c = _divergence_norm(field_, mesh, quad)
    E_c_raw = _divergence_norm(raw, mesh, quad) if raw is not None else E_c
    return ErrorReport(
        W=W,
        E_u=float(np.sqrt(eu / nu)) if nu > 0 else float(np.sqrt(eu)),
        E_p=float(np.sqrt(ep / np_)) if np_ > 0 else float(np.sqrt(ep)),
        E_c=E_c,
        E_c_raw=E_c_raw,
    )


@dataclass
class ConvergenceTable:
    rows: list
    slopes: dict
    converging: dict

    @property
    def no_convergence(self) -> bool:
        return not all(self.converging.values())


def log_slope(Ws, errors) -> float:
    """Least-squares slope of log10(error) against W."""
    Ws = np.asarray(Ws, dtype=float)
    errs = np.maximum(np.asarray(errors, dtype=float), np.finfo(float).tiny)
    if len(Ws) < 2:
        raise ValueError("need at least two points for a slope")
    return float(np.polyfit(Ws, np.log10(errs), 1)[0])


def convergence_table(reports, metrics=("E_u", "E_p", "E_c"), flat_tol: float = 1e-3) -> ConvergenceTable:
    """Rows sorted by W plus fitted log10-slopes; a slope above ``-flat_tol`` is flagged."""
    reports = sorted(reports, key=lambda r: r.W)
    rows = [{"W": r.W, **{m: getattr(r, m) for m in metrics}} for r in reports]
    slopes, ok = {}, {}
    if len(reports) >= 3:
        for m in metrics:
            s = log_slope([r.W for r in reports], [getattr(r, m) for r in reports])
            slopes[m] = s
            ok[m] = s < -flat_tol
            if not ok[m]:
                log.warning("no convergence in %s: slope %.3g", m, s)
    return ConvergenceTable(rows, slopes, ok)
