"""Wrapped normal distribution on the hyperboloid.

A draw is a diagonal Gaussian in T_o (zeroth coordinate 0), parallel
transported to T_mu and pushed to the manifold with exp_mu. The density is
with respect to the Riemannian volume of H^n_K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffnet as D
from . import lorentz as L
from .errors import DimensionError, DomainError
from .rng import make_rng, normal

_LOG_2PI = math.log(2.0 * math.pi)


def log_prob(z, mu, sigma, radius=1.0):
    """Wrapped-normal log-density; works on arrays or tape tensors.

    Shapes: z (..., n+1), mu (n+1,) or broadcastable, sigma (n,).
    """
    n = D.value_of(z).shape[-1] - 1
    o = L.origin(n, radius)
    u = L.log_map(mu, z, radius)
    v = L.parallel_transport(mu, o, u, radius)
    scaled = D.div(D.getitem(v, (..., slice(1, None))), sigma)
    gauss = D.sub(D.mul(-0.5, D.dot(scaled, scaled)),
                  D.add(D.reduce_sum(D.log(sigma)), 0.5 * n * _LOG_2PI))
    return D.sub(gauss, L.exp_map_logdet(u, radius))


def sample(mu, sigma, count: int, seed: int | np.random.Generator, radius=1.0) -> np.ndarray:
    """Draw ``count`` points (numpy only)."""
    if count < 1:
        raise DomainError("count must be >= 1")
    mu = np.asarray(D.value_of(mu), dtype=np.float64)
    sigma = np.asarray(D.value_of(sigma), dtype=np.float64)
    radius = float(D.value_of(radius))
    n = mu.shape[-1] - 1
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    eps = normal(rng, (count, n)) * sigma
    v = np.concatenate([np.zeros((count, 1)), eps], axis=1)
    o = L.origin(n, radius)
    u = L.parallel_transport(o, mu, v, radius)
    return L.exp_map(mu, u, radius)


@dataclass
class WrappedNormal:
    mu: np.ndarray
    sigma: np.ndarray
    radius: float = 1.0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.ndim != 1 or self.sigma.shape != (self.mu.shape[0] - 1,):
            raise DimensionError(
                f"mu has shape {self.mu.shape} but sigma has shape {self.sigma.shape}")
        if np.any(self.sigma <= 0):
            raise DomainError("sigma must be positive")
        L.check_on_hyperboloid(self.mu, self.radius)

    @classmethod
    def from_tangent(cls, mean_tangent: Sequence[float], sigma: Sequence[float],
                     radius: float = 1.0) -> WrappedNormal:
        """Location given as spatial tangent coordinates at the origin."""
        mean_tangent = np.asarray(mean_tangent, dtype=np.float64)
        n = mean_tangent.shape[0]
        v = np.concatenate([[0.0], mean_tangent])
        mu = L.exp_map(L.origin(n, radius), v, radius)
        return cls(mu, np.asarray(sigma, dtype=np.float64), radius)

    @property
    def dim(self) -> int:
        return self.mu.shape[0] - 1

    def sample(self, count: int, seed) -> np.ndarray:
        return sample(self.mu, self.sigma, count, seed, self.radius)

    def log_prob(self, z) -> np.ndarray:
        return log_prob(z, self.mu, self.sigma, self.radius)


def mixture_log_prob(components: Sequence[tuple[float, WrappedNormal]], z) -> np.ndarray:
    """log sum_k w_k p_k(z), evaluated with a max shift."""
    if not components:
        raise DomainError("mixture needs at least one component")
    weights = np.array([w for w, _ in components], dtype=np.float64)
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise DomainError("mixture weights must be positive and sum to 1")
    terms = np.stack([np.log(w) + c.log_prob(z) for w, c in components])
    top = np.max(terms, axis=0)
    return top + np.log(np.sum(np.exp(terms - top), axis=0))


def mixture_sample(components: Sequence[tuple[float, WrappedNormal]], count: int,
                   seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    weights = np.array([w for w, _ in components], dtype=np.float64)
    labels = np.searchsorted(np.cumsum(weights), rng.random(count), side="right")
    labels = np.minimum(labels, len(components) - 1)
    out = np.empty((count, components[0][1].dim + 1))
    for k, (_, comp) in enumerate(components):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            out[idx] = comp.sample(idx.size, rng)
    return out
