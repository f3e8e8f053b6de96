"""Sobolev norms of nodal polynomials as explicit quadratic forms.

Every Gram acts on nodal values at the degree-d GLL points (1D) or on the
row-major (eta, xi) tensor grid (2D).  All integrals are evaluated exactly
for polynomial arguments.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import gauss_rule, gll_rule, lagrange_matrix

KINDS = ("L2_I", "Hhalf_I", "L2_S", "H1_S", "H2_S")


@dataclass(frozen=True, eq=False)
class SobolevGram:
    kind: str
    order: int
    matrix: np.ndarray

    def value(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.matrix @ v)


def _freeze(kind: str, d: int, G: np.ndarray) -> SobolevGram:
    G = 0.5 * (G + G.T)
    G.setflags(write=False)
    return SobolevGram(kind, d, G)


@lru_cache(maxsize=None)
def _interval_mass(d: int, deriv: int) -> np.ndarray:
    """int_I l_i^(k) l_j^(k) for the degree-d GLL Lagrange basis."""
    x, w = gauss_rule(d + 2)
    E = lagrange_matrix(gll_rule(d).nodes, x, deriv)
    return E.T @ (w[:, None] * E)


@lru_cache(maxsize=None)
def gram_l2_interval(d: int) -> SobolevGram:
    return _freeze("L2_I", d, _interval_mass(d, 0).copy())


def hhalf_seminorm_matrix(d: int) -> np.ndarray:
    """Gram of int_I int_I (w(s) - w(t))^2 / (s - t)^2 ds dt.

    For a polynomial w the divided difference (w(s) - w(t)) / (s - t) is a
    polynomial of degree d-1 in each variable (equal to w'(s) on the
    diagonal), so a tensor Gauss rule with d+1 points per direction is exact.
    """
    nodes = gll_rule(d).nodes
    x, w = gauss_rule(d + 1)
    E = lagrange_matrix(nodes, x)
    dE = lagrange_matrix(nodes, x, 1)
    diff = x[:, None] - x[None, :]
    off = ~np.eye(len(x), dtype=bool)
    Q = np.empty((len(x), len(x), len(nodes)))
    Q[off] = ((E[:, None, :] - E[None, :, :])[off]) / diff[off][:, None]
    Q[np.eye(len(x), dtype=bool)] = dE
    ww = (w[:, None] * w[None, :]).ravel()
    Qf = Q.reshape(-1, len(nodes))
    return Qf.T @ (ww[:, None] * Qf)


@lru_cache(maxsize=None)
def gram_hhalf_interval(d: int) -> SobolevGram:
    return _freeze("Hhalf_I", d, _interval_mass(d, 0) + hhalf_seminorm_matrix(d))


@lru_cache(maxsize=None)
def gram_l2_square(d: int) -> SobolevGram:
    M0 = _interval_mass(d, 0)
    return _freeze("L2_S", d, np.kron(M0, M0))


@lru_cache(maxsize=None)
def gram_h1_square(d: int) -> SobolevGram:
    M0, M1 = _interval_mass(d, 0), _interval_mass(d, 1)
    return _freeze("H1_S", d, np.kron(M0, M0) + np.kron(M0, M1) + np.kron(M1, M0))


@lru_cache(maxsize=None)
def gram_h2_square(d: int) -> SobolevGram:
    M0, M1, M2 = (_interval_mass(d, k) for k in range(3))
    G = (np.kron(M0, M0) + np.kron(M0, M1) + np.kron(M1, M0)
         + np.kron(M0, M2) + np.kron(M1, M1) + np.kron(M2, M0))
    return _freeze("H2_S", d, G)


GRAMS = {
    "L2_I": gram_l2_interval,
    "Hhalf_I": gram_hhalf_interval,
    "L2_S": gram_l2_square,
    "H1_S": gram_h1_square,
    "H2_S": gram_h2_square,
}


def gram(kind: str, d: int) -> SobolevGram:
    if kind not in GRAMS:
        raise ValueError(f"unknown Gram kind {kind!r}")
    return GRAMS[kind](d)


def edge_jump_value(form: SobolevGram | str, trace_a, trace_b) -> float:
    """(a - b)^T G (a - b) for two traces already aligned to a common direction."""
    a = np.asarray(trace_a, dtype=float)
    b = np.asarray(trace_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"trace length mismatch: {a.shape} vs {b.shape}")
    if isinstance(form, str):
        form = gram(form, len(a) - 1)
    if form.matrix.shape[0] != a.size:
        raise ValueError(f"trace length {a.size} does not match Gram of order {form.order}")
    j = a - b
    return float(j @ form.matrix @ j)
