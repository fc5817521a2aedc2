"""Brute-force finite-difference Jacobian oracles.

These never use the closed-form volume factors: they differentiate maps
numerically and measure volume with the metric induced on the hyperboloid
by the Minkowski form. Used by the test suite to check the analytic
log-determinants.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import lorentz as L


def _metric(n_ambient: int) -> np.ndarray:
    g = np.eye(n_ambient)
    g[0, 0] = -1.0
    return g


def central_jacobian(f: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """d f / d x at x0 by central differences, shape (len(f(x0)), len(x0))."""
    x0 = np.asarray(x0, dtype=np.float64)
    cols = []
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((np.asarray(f(x0 + e)) - np.asarray(f(x0 - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def induced_log_volume(jac: np.ndarray) -> float:
    """0.5 log det(J^T G J) for an ambient Jacobian J of shape (n+1, n)."""
    gram = jac.T @ _metric(jac.shape[0]) @ jac
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0:
        raise ValueError("degenerate Jacobian")
    return 0.5 * logdet


def manifold_map_logdet(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                        radius: float = 1.0, h: float = 1e-5) -> float:
    """log|det| of a map H^n -> H^n at x, w.r.t. Riemannian volume.

    The input is parametrised by geodesic normal coordinates at x in a
    Lorentz-orthonormal basis; their differential at 0 is an isometry, so
    only the output side needs the induced metric.
    """
    basis = L.orthonormal_tangent_basis(x, radius)

    def chart(eps):
        return f(L.exp_map(x, eps @ basis, radius, max_norm=None))

    return induced_log_volume(central_jacobian(chart, np.zeros(len(basis)), h))


def exp_map_volume(x: np.ndarray, coords: np.ndarray, radius: float = 1.0,
                   h: float = 1e-5) -> float:
    """log volume factor of u -> exp_x(sum u_i e_i) at ``coords``."""
    basis = L.orthonormal_tangent_basis(x, radius)

    def g(u):
        return L.exp_map(x, u @ basis, radius, max_norm=None)

    return induced_log_volume(central_jacobian(g, np.asarray(coords, float), h))


def normal_chart_logdet(f: Callable[[np.ndarray], np.ndarray], u: np.ndarray,
                        radius: float = 1.0, h: float = 1e-5) -> float:
    """log|det| of f via normal coordinates at the origin.

    F = chart^-1 o f o chart with chart(u) = exp_o((0, u)). The Riemannian
    log-det is log|det DF| plus the chart volume factors at output and input,
    each computed numerically with :func:`exp_map_volume`.
    """
    u = np.asarray(u, dtype=np.float64)
    n = u.size
    o = L.origin(n, radius)

    def F(w):
        y = f(L.exp_map(o, np.concatenate([[0.0], w]), radius, max_norm=None))
        return L.log_map(o, y, radius, max_norm=None)[1:]

    sign, logdet = np.linalg.slogdet(central_jacobian(F, u, h))
    if sign == 0:
        raise ValueError("singular chart Jacobian")
    return logdet + exp_map_volume(o, F(u), radius, h) - exp_map_volume(o, u, radius, h)


def transport_logdet(x: np.ndarray, y: np.ndarray, radius: float = 1.0,
                     h: float = 1e-5) -> float:
    """log|det| of v -> PT_{x->y}(v) in orthonormal bases at x and y."""
    bx = L.orthonormal_tangent_basis(x, radius)
    by = L.orthonormal_tangent_basis(y, radius)

    def f(eps):
        w = L.parallel_transport(x, y, eps @ bx, radius)
        return np.array([L.minkowski_inner(w, b) for b in by])

    sign, logdet = np.linalg.slogdet(central_jacobian(f, np.full(len(bx), 0.1), h))
    return logdet


def euclidean_logdet(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                     h: float = 1e-5) -> float:
    sign, logdet = np.linalg.slogdet(central_jacobian(f, x, h))
    return logdet
