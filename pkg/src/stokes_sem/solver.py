"""Preconditioned conjugate gradients with element-block preconditioners."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import DofLayout
from .sobolev import gram_h1_square, gram_h2_square

log = logging.getLogger(__name__)

VARIANTS = (0, 2, 3)


class SolverError(RuntimeError):
    pass


class BlockPreconditioner:
    """Block-diagonal form nu^e ||u||_{H2(S)}^2 + ||p||_{H1(S)}^2 on every element.

    All elements share the two reference Grams, so the inverse is applied to
    every element at once with one Cholesky solve per Gram.
    """

    def __init__(self, layout: DofLayout, nus, variant: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"preconditioner variant must be one of {VARIANTS}, got {variant}")
        self.layout = layout
        self.variant = variant
        self.weights = np.asarray(nus, dtype=float) ** variant
        if self.weights.shape != (layout.n_elements,):
            raise ValueError("need one viscosity per element")
        W = layout.W
        self.H2 = gram_h2_square(W).matrix
        self.H1 = gram_h1_square(W).matrix
        try:
            self._h2 = cho_factor(self.H2)
            self._h1 = cho_factor(self.H1)
        except np.linalg.LinAlgError as exc:
            raise SolverError("preconditioner Gram is not positive definite") from exc

    def _split(self, v):
        lay = self.layout
        return np.asarray(v, dtype=float).reshape(lay.n_elements, 3, lay.block)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Action of the block matrix P itself."""
        b = self._split(v)
        out = np.empty_like(b)
        out[:, :2] = self.weights[:, None, None] * (b[:, :2] @ self.H2)
        out[:, 2] = b[:, 2] @ self.H1
        return out.ravel()

    def solve(self, r: np.ndarray) -> np.ndarray:
        """Action of P^{-1}."""
        b = self._split(r)
        n_el, nb = self.layout.n_elements, self.layout.block
        out = np.empty_like(b)
        u = cho_solve(self._h2, b[:, :2].reshape(-1, nb).T).T.reshape(n_el, 2, nb)
        out[:, :2] = u / self.weights[:, None, None]
        out[:, 2] = cho_solve(self._h1, b[:, 2].T).T
        return out.ravel()

    __call__ = solve


def build_preconditioner(mesh, W: int, variant: int = 0, spec=None, nus=None) -> BlockPreconditioner:
    """Preconditioner for a mesh; viscosities come from ``spec`` or ``nus``."""
    if nus is None:
        if spec is None:
            nus = np.ones(mesh.n_elements)
        else:
            nus = [spec.nu(e.subdomain) for e in mesh.elements]
    return BlockPreconditioner(DofLayout(mesh.n_elements, W), nus, variant)


@dataclass
class SolveReport:
    """``rel_residual`` is the preconditioned relative residual the stopping
    test uses; ``true_residual`` is ||h - A V|| / ||h||."""

    iterations: int
    rel_residual: float
    true_residual: float
    converged: bool
    seconds: float
    functional: float | None = None
    W: int | None = None
    nu: tuple | None = None
    variant: int | None = None
    history: list = field(default_factory=list, repr=False)


def pcg(system, precond=None, tol: float = 1e-12, maxit: int = 20000, x0=None,
        record_history: bool = False) -> tuple[np.ndarray, SolveReport]:
    """Solve A x = h by preconditioned conjugate gradients.

    Stops when sqrt(r^T P^-1 r) has dropped by ``tol`` relative to its
    initial value.  The energy functional x^T A x - 2 h^T x must not increase
    between iterations; a violation or a non-positive curvature raises.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    t0 = time.perf_counter()
    h = np.asarray(system.rhs, dtype=float)
    apply_A = system.apply
    if precond is None:
        precond = lambda r: r.copy()  # noqa: E731
    hnorm = np.linalg.norm(h)
    x = np.zeros_like(h) if x0 is None else np.array(x0, dtype=float)
    r = h - apply_A(x) if x0 is not None else h.copy()
    if not np.any(r):
        return x, SolveReport(0, 0.0, 0.0, True, time.perf_counter() - t0)
    z = precond(r)
    rz = float(r @ z)
    if rz <= 0.0:
        raise SolverError(f"preconditioner is not positive definite: r^T z = {rz:.3e}")
    rz0 = rz
    p = z.copy()
    energy = float(x @ (apply_A(x) - 2 * h)) if x0 is not None else 0.0
    history = []
    it = 0
    converged = False
    while not converged and it < maxit:
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverError(f"PCG breakdown: p^T A p = {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        new_energy = energy - alpha * rz
        if new_energy > energy + 1e-14 * abs(energy):
            raise SolverError("PCG energy increased; operator or preconditioner is not SPD")
        energy = new_energy
        z = precond(r)
        rz_new = float(r @ z)
        if rz_new < 0.0:
            raise SolverError("preconditioner is not positive definite")
        it += 1
        if record_history:
            history.append(np.sqrt(max(rz_new, 0.0) / rz0))
        if rz_new <= tol * tol * rz0:
            converged = True
            rz = rz_new
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_res = np.linalg.norm(h - apply_A(x)) / (hnorm if hnorm > 0 else 1.0)
    prel = float(np.sqrt(max(rz, 0.0) / rz0)) if rz0 > 0 else 0.0
    if not converged:
        log.warning("PCG hit maxit=%d with preconditioned residual %.3e", maxit, prel)
    report = SolveReport(it, prel, float(true_res), converged, time.perf_counter() - t0, history=history)
    return x, report
