"""Brute-force reference computations used to cross-check the adaptive quadratures.

These deliberately avoid the adaptive machinery: fixed Gauss-Legendre rules
on uniform panels (split at integrand kinks), random piecewise-constant
selections, and the periodic trapezoid rule.
"""

from __future__ import annotations

import numpy as np

from .asymptotics import _kink_times
from .cycle import AdjointBasis
from .model import SetValuedPerturbation, support


def _gauss_nodes(edges: np.ndarray, order: int):
    """Nodes, weights and panel index for composite Gauss-Legendre on ``edges``."""
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def _window(basis: AdjointBasis, pert: SetValuedPerturbation, t: float, n_panels: int):
    T = basis.period
    panels = np.linspace(t - T, t, n_panels + 1)
    state = basis.cycle.x
    kinks = _kink_times(pert, state, lambda s: -basis.z_hat(s), lambda s: s, t - T, t, n=8 * n_panels)
    edges = np.unique(np.concatenate([panels, kinks]))
    owner = np.clip(np.searchsorted(panels, 0.5 * (edges[:-1] + edges[1:])) - 1, 0, n_panels - 1)
    return edges, owner


def selection_panel_integrals(basis: AdjointBasis, pert: SetValuedPerturbation, t: float,
                              n_panels: int = 512, order: int = 8):
    """Per-panel pieces of int <-z_hat, h> for piecewise-constant coefficient selections.

    Returns ``(A, B)``: A[k] integrates the lower-bound selection over panel
    k; B[k, i] integrates the range (hi_i - lo_i) <-z_hat, u_i>, so a
    selection with lambda_i = lo_i + U[k, i] (hi_i - lo_i) integrates to
    sum_k A[k] + sum_{k,i} U[k, i] B[k, i].
    """
    edges, owner = _window(basis, pert, t, n_panels)
    nodes, weights = _gauss_nodes(edges, order)
    sub = np.repeat(np.arange(edges.size - 1), order)
    panel = owner[sub]
    x = basis.cycle.x(nodes)
    d = -basis.z_hat(nodes)
    base = np.sum(d * pert.value_center(nodes, x, 0.0), axis=0)
    bounds = pert.coefficient_bounds(nodes, x, 0.0)
    dirs = pert.directions(nodes, x)
    ranges = []
    for (lo, hi), u in zip(bounds, dirs):
        w = np.sum(d * u, axis=0)
        base = base + lo * w
        ranges.append((hi - lo) * w)
    A = np.bincount(panel, weights * base, minlength=n_panels)
    B = np.column_stack([np.bincount(panel, weights * r, minlength=n_panels) for r in ranges]) \
        if ranges else np.zeros((n_panels, 0))
    return A, B


def monte_carlo_mperp(basis: AdjointBasis, pert: SetValuedPerturbation, t: float, n_selections: int = 2000,
                      n_panels: int = 512, rng=None) -> np.ndarray:
    """gamma * int_{t-T}^{t} <-z_hat, h> for random piecewise-constant selections h."""
    rng = np.random.default_rng(0) if rng is None else rng
    A, B = selection_panel_integrals(basis, pert, t, n_panels)
    U = rng.random((n_selections, n_panels, B.shape[1]))
    vals = A.sum() + np.einsum("skj,kj->s", U, B)
    return basis.gamma * vals


def bang_bang_mperp(basis: AdjointBasis, pert: SetValuedPerturbation, t: float, n_panels: int = 512,
                    order: int = 8) -> tuple:
    """Endpoints of M_perp(t) from the bang-bang selections aligned with +-<-z_hat, u_i>."""
    edges, _ = _window(basis, pert, t, n_panels)
    nodes, weights = _gauss_nodes(edges, order)
    x = basis.cycle.x(nodes)
    d = -basis.z_hat(nodes)
    hi = weights @ support(pert, d, nodes, x, 0.0)
    lo = -(weights @ support(pert, -d, nodes, x, 0.0))
    a, b = basis.gamma * lo, basis.gamma * hi
    return min(a, b), max(a, b)


def melnikov_trapezoid(basis: AdjointBasis, pert: SetValuedPerturbation, theta: float, n: int = 4096) -> tuple:
    """Melnikov endpoints by the periodic trapezoid rule (accurate for smooth integrands)."""
    T = basis.period
    s = np.arange(n) * T / n
    x = basis.cycle.x(s + theta)
    d = basis.z_tilde(s + theta)
    hi = support(pert, d, s, x, 0.0).sum() * T / n
    lo = -support(pert, -d, s, x, 0.0).sum() * T / n
    return lo, hi
