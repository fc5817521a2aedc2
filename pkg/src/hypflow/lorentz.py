"""Closed-form operations on the Lorentz (hyperboloid) model.

Points of H^n_K are arrays of shape ``(..., n+1)`` with the time-like
coordinate first and ``<x, x>_L = -R**2`` where ``R = 1/sqrt(-K)``. Tangent
vectors use the same ambient layout. All functions broadcast over leading
axes and accept either numpy arrays or :class:`hypflow.diffnet.Tensor`
values (including a tensor-valued ``radius``), in which case the result is
recorded on the tape.

Small-norm limits (sinh(t)/t and friends) are evaluated through functions of
the squared norm, so they are smooth at zero and differentiable there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnet as D
from .errors import DimensionError, DomainError

MAX_NORM = 40.0
EPS_FLOOR = 1e-15


@dataclass(frozen=True)
class CurvatureState:
    """Curvature K < 0, stored through the radius R = 1/sqrt(-K).

    ``warmup`` is ``(start_radius, end_radius, epochs)``; during warmup the
    radius follows the linear schedule and afterwards it stays at
    ``end_radius`` unless the trainer learns it.
    """

    radius: float = 1.0
    learnable: bool = False
    warmup: tuple[float, float, int] | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"radius must be positive, got {self.radius}")
        if self.warmup is not None:
            start, end, epochs = self.warmup
            if start <= 0 or end <= 0 or epochs < 0:
                raise DomainError(f"invalid warmup schedule {self.warmup}")

    @property
    def K(self) -> float:
        return -1.0 / self.radius ** 2

    @classmethod
    def from_curvature(cls, K: float, **kwargs) -> CurvatureState:
        if not K < 0:
            raise DomainError(f"curvature must be negative, got {K}")
        return cls(radius=1.0 / np.sqrt(-K), **kwargs)

    def radius_at(self, epoch: int) -> float:
        if self.warmup is None:
            return self.radius
        start, end, epochs = self.warmup
        if epoch >= epochs:
            return end
        return start + (end - start) * epoch / epochs


def _check_pair(x, y) -> None:
    nx, ny = D.value_of(x).shape[-1:], D.value_of(y).shape[-1:]
    if nx != ny:
        raise DimensionError(f"ambient sizes differ: {nx} vs {ny}")
    if nx and nx[0] < 2:
        raise DimensionError("ambient vectors need at least 2 coordinates")


def minkowski_inner(x, y, keepdims: bool = False):
    """-x0*y0 + sum_i x_i*y_i over the last axis."""
    _check_pair(x, y)
    time = D.mul(D.getitem(x, (..., slice(0, 1))), D.getitem(y, (..., slice(0, 1))))
    space = D.dot(D.getitem(x, (..., slice(1, None))),
                  D.getitem(y, (..., slice(1, None))), keepdims=True)
    out = D.sub(space, time)
    return out if keepdims else D.getitem(out, (..., 0))


def lorentz_norm(v, keepdims: bool = False):
    """sqrt(<v, v>_L) for space-like (tangent) vectors, floored at EPS_FLOOR."""
    sq = minkowski_inner(v, v, keepdims=keepdims)
    sq_val = D.value_of(sq)
    scale = np.maximum(1.0, np.sum(D.value_of(v) ** 2, axis=-1, keepdims=keepdims))
    if np.any(sq_val < -1e-9 * scale):
        raise DomainError("vector is time-like; Lorentz norm undefined")
    return D.sqrt(D.clamp(sq, lo=EPS_FLOOR))


def origin(n: int, radius=1.0):
    """The point (R, 0, ..., 0) of H^n."""
    if isinstance(radius, D.Tensor):
        return D.concat([D.broadcast_to(radius, (1,)), np.zeros(n)])
    o = np.zeros(n + 1)
    o[0] = radius
    return o


def check_on_hyperboloid(x, radius=1.0, tol: float = 1e-6) -> None:
    """Raise DomainError unless every point satisfies |K<x,x> - 1| < tol, x0 > 0."""
    xv = D.value_of(x)
    r = float(D.value_of(radius))
    sq = minkowski_inner(xv, xv)
    err = np.abs(-sq / r ** 2 - 1.0)
    if not np.all(np.isfinite(xv)):
        raise DomainError("non-finite coordinates")
    if np.any(err >= tol) or np.any(xv[..., 0] <= 0):
        worst = float(np.max(err)) if err.size else 0.0
        raise DomainError(f"points are off the hyperboloid (max error {worst:.3g})")


def distance(x, y, radius=1.0):
    """Geodesic distance R * arccosh(-<x, y>_L / R**2)."""
    r2 = D.mul(radius, radius)
    alpha = D.div(D.neg(minkowski_inner(x, y)), r2)
    return D.mul(radius, D.arccosh(D.clamp(alpha, lo=1.0)))


def project_to_hyperboloid(x, radius=1.0):
    """Rescale a time-like ambient vector onto the upper sheet."""
    sq = minkowski_inner(x, x, keepdims=True)
    if np.any(D.value_of(sq) >= 0):
        raise DomainError("only time-like vectors can be projected onto the hyperboloid")
    out = D.mul(x, D.div(radius, D.sqrt(D.neg(sq))))
    sign = np.where(D.value_of(x)[..., :1] < 0, -1.0, 1.0)
    return D.mul(out, sign)


def lift_to_hyperboloid(spatial, radius=1.0):
    """Fill in x0 = sqrt(|spatial|^2 + R^2) for given spatial coordinates."""
    sq = D.dot(spatial, spatial, keepdims=True)
    x0 = D.sqrt(D.add(sq, D.mul(radius, radius)))
    return D.concat([x0, spatial])


def tangent_projection(x, u, radius=1.0):
    """Orthogonal (Lorentz) projection of an ambient vector onto T_x."""
    coef = D.div(minkowski_inner(x, u, keepdims=True), D.mul(radius, radius))
    return D.add(u, D.mul(coef, x))


def clamp_norm(v, max_norm: float | None = MAX_NORM):
    """Shrink tangent vectors whose Lorentz norm exceeds ``max_norm``."""
    if max_norm is None:
        return v
    sq = minkowski_inner(v, v, keepdims=True)
    over = D.value_of(sq) > max_norm ** 2
    if not np.any(over):
        return v
    factor = D.where(over, D.div(max_norm, D.sqrt(D.clamp(sq, lo=max_norm ** 2))), 1.0)
    return D.mul(v, factor)


def exp_map(x, v, radius=1.0, max_norm: float | None = MAX_NORM):
    """cosh(|v|/R) x + R sinh(|v|/R) v / |v|."""
    _check_pair(x, v)
    v = clamp_norm(v, max_norm)
    u = D.div(D.clamp(minkowski_inner(v, v, keepdims=True), lo=0.0),
              D.mul(radius, radius))
    y = D.add(D.mul(D.cosh_sqrt(u), x), D.mul(D.sinhc_sq(u), v))
    # x0 from the spatial part: cancellation in cosh/sinh otherwise leaves a
    # relative invariant error of order eps * |y|^2 far from the origin
    return lift_to_hyperboloid(D.getitem(y, (..., slice(1, None))), radius)


def log_map(x, y, radius=1.0, max_norm: float | None = MAX_NORM):
    """Inverse of :func:`exp_map` at ``x``.

    Uses w = y - alpha x with alpha = -<x, y>_L / R^2, whose Lorentz norm is
    R sinh(d/R); the result is asinh(|w|/R) R w / |w|.
    """
    _check_pair(x, y)
    r2 = D.mul(radius, radius)
    alpha = D.div(D.neg(minkowski_inner(x, y, keepdims=True)), r2)
    w = D.sub(y, D.mul(alpha, x))
    u = D.div(D.clamp(minkowski_inner(w, w, keepdims=True), lo=0.0), r2)
    return clamp_norm(D.mul(D.asinhc_sq(u), w), max_norm)


def parallel_transport(x, y, v, radius=1.0):
    """Transport v in T_x to T_y along the geodesic joining them."""
    _check_pair(x, v)
    num = minkowski_inner(y, v, keepdims=True)
    den = D.sub(D.mul(radius, radius), minkowski_inner(x, y, keepdims=True))
    return D.add(v, D.mul(D.div(num, den), D.add(x, y)))


def exp_map_logdet(v, radius=1.0, dim: int | None = None):
    """log|det| of exp_map at a tangent vector v: (n-1) log(R sinh(|v|/R)/|v|).

    ``dim`` defaults to the manifold dimension n = v.shape[-1] - 1; pass it
    explicitly when v lives in a lower-dimensional totally geodesic subspace.
    The log-det of log_map is the negation.
    """
    n = D.value_of(v).shape[-1] - 1 if dim is None else dim
    u = D.div(D.clamp(minkowski_inner(v, v), lo=0.0), D.mul(radius, radius))
    return D.mul(float(n - 1), D.log_sinhc_sq(u))


def log_map_logdet(v, radius=1.0, dim: int | None = None):
    return D.neg(exp_map_logdet(v, radius, dim))


def to_poincare(x, radius=1.0):
    """Stereographic projection to the Poincare ball of radius R."""
    x0 = D.getitem(x, (..., slice(0, 1)))
    spatial = D.getitem(x, (..., slice(1, None)))
    return D.div(D.mul(radius, spatial), D.add(radius, x0))


def from_poincare(p, radius=1.0):
    """Inverse of :func:`to_poincare`; requires |p| < R."""
    r = float(D.value_of(radius))
    sq = D.dot(p, p, keepdims=True)
    if np.any(D.value_of(sq) >= r * r):
        raise DomainError("Poincare coordinates must satisfy |p| < R")
    r2 = D.mul(radius, radius)
    den = D.sub(r2, sq)
    x0 = D.div(D.mul(radius, D.add(r2, sq)), den)
    spatial = D.div(D.mul(D.mul(2.0, r2), p), den)
    return D.concat([x0, spatial])


def poincare_log_volume(p, radius=1.0):
    """log of the Riemannian volume density in Poincare-ball coordinates.

    The ball metric is conformal with factor 2R^2 / (R^2 - |p|^2), so the
    volume element carries that factor to the n-th power.
    """
    pv = np.asarray(D.value_of(p))
    r2 = float(D.value_of(radius)) ** 2
    n = pv.shape[-1]
    return n * np.log(2.0 * r2 / (r2 - np.sum(pv * pv, axis=-1)))


def orthonormal_tangent_basis(x, radius=1.0) -> np.ndarray:
    """Lorentz-orthonormal basis of T_x, shape (n, n+1).

    Gram-Schmidt under the Lorentz inner product applied to the standard
    spatial basis vectors projected onto the tangent space.
    """
    xv = np.asarray(D.value_of(x), dtype=np.float64)
    r = float(D.value_of(radius))
    n = xv.shape[-1] - 1
    basis: list[np.ndarray] = []
    for i in range(1, n + 1):
        e = np.zeros(n + 1)
        e[i] = 1.0
        u = tangent_projection(xv, e, r)
        for b in basis:
            u = u - minkowski_inner(u, b) * b
        u = u / np.sqrt(minkowski_inner(u, u))
        basis.append(u)
    return np.stack(basis)
