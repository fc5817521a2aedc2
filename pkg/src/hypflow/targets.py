"""Synthetic target densities on H^2.

Euclidean-defined patterns (checkerboard, spiral) are sampled in the tangent
space at the origin and pushed to the manifold with exp_o. Wrapped Gaussian
targets take their location as tangent coordinates at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import lorentz as L
from . import wrapped_normal as wn
from .rng import make_rng, normal

TARGET_KINDS = ("wg", "mwg", "checkerboard", "spiral")


@dataclass
class TargetSpec:
    kind: str = "wg"
    mean: list[float] = field(default_factory=lambda: [-1.0, 1.0])
    sigma: list[float] = field(default_factory=lambda: [1.0, 0.25])
    means: list[list[float]] = field(default_factory=lambda: [[-1.0, 1.0], [1.0, -1.0]])
    sigmas: list[list[float]] = field(default_factory=lambda: [[0.5, 0.5], [0.5, 0.5]])
    weights: list[float] = field(default_factory=lambda: [0.5, 0.5])
    square: float = 1.0
    extent: float = 2.0
    turns: float = 2.0
    spiral_radius: float = 2.0
    noise: float = 0.05
    radius: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}; expected one of {TARGET_KINDS}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind == "wg":
            if len(self.mean) != len(self.sigma) or len(self.mean) < 2:
                raise ValueError("wg mean and sigma must have equal length >= 2")
            if min(self.sigma) <= 0:
                raise ValueError("wg sigma must be positive")
        elif self.kind == "mwg":
            k = len(self.weights)
            if k == 0 or len(self.means) != k or len(self.sigmas) != k:
                raise ValueError("mwg needs one mean, sigma and weight per component")
            if min(self.weights) <= 0 or abs(sum(self.weights) - 1.0) > 1e-9:
                raise ValueError("mwg weights must be positive and sum to 1")
            if any(min(s) <= 0 for s in self.sigmas):
                raise ValueError("mwg sigmas must be positive")
        elif self.kind == "checkerboard":
            if self.square <= 0 or self.extent <= 0:
                raise ValueError("checkerboard square and extent must be positive")
            cells = 2 * self.extent / self.square
            if abs(cells - round(cells)) > 1e-9:
                raise ValueError("checkerboard extent must be a multiple of the square size")
        elif self.kind == "spiral":
            if self.turns <= 0 or self.spiral_radius <= 0 or self.noise < 0:
                raise ValueError("spiral turns and radius must be positive, noise >= 0")

    @property
    def dim(self) -> int:
        if self.kind == "wg":
            return len(self.mean)
        if self.kind == "mwg":
            return len(self.means[0])
        return 2


@dataclass
class Target:
    spec: TargetSpec
    sample: Callable[[int, int], np.ndarray]
    log_prob: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def radius(self) -> float:
        return self.spec.radius


def _components(spec: TargetSpec) -> list[tuple[float, wn.WrappedNormal]]:
    return [(w, wn.WrappedNormal.from_tangent(m, s, spec.radius))
            for w, m, s in zip(spec.weights, spec.means, spec.sigmas)]


def _push(spatial: np.ndarray, radius: float) -> np.ndarray:
    v = np.concatenate([np.zeros((len(spatial), 1)), spatial], axis=1)
    return L.exp_map(L.origin(spatial.shape[1], radius), v, radius)


def checkerboard_cells(spec: TargetSpec) -> list[tuple[float, float]]:
    """Lower-left corners of the occupied squares."""
    cells = int(round(2 * spec.extent / spec.square))
    return [(-spec.extent + i * spec.square, -spec.extent + j * spec.square)
            for i in range(cells) for j in range(cells) if (i + j) % 2 == 0]


def checkerboard_membership(spec: TargetSpec, spatial: np.ndarray) -> np.ndarray:
    """Index of the occupied square containing each tangent point, or -1."""
    corners = np.array(checkerboard_cells(spec))
    out = np.full(len(spatial), -1)
    for k, (cx, cy) in enumerate(corners):
        inside = ((spatial[:, 0] >= cx) & (spatial[:, 0] < cx + spec.square)
                  & (spatial[:, 1] >= cy) & (spatial[:, 1] < cy + spec.square))
        out[inside] = k
    return out


def _checkerboard_tangent(spec: TargetSpec, count: int, rng) -> np.ndarray:
    corners = np.array(checkerboard_cells(spec))
    pick = rng.integers(0, len(corners), size=count)
    return corners[pick] + spec.square * rng.random((count, 2))


def _spiral_tangent(spec: TargetSpec, count: int, rng) -> np.ndarray:
    s = rng.random(count)
    angle = 2.0 * np.pi * spec.turns * s
    r = spec.spiral_radius * s
    pts = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
    return pts + spec.noise * normal(rng, (count, 2))


def make_target(spec: TargetSpec) -> Target:
    spec.validate()
    if spec.kind == "wg":
        dist = wn.WrappedNormal.from_tangent(spec.mean, spec.sigma, spec.radius)
        return Target(spec, dist.sample, dist.log_prob)
    if spec.kind == "mwg":
        comps = _components(spec)
        return Target(spec, lambda count, seed: wn.mixture_sample(comps, count, seed),
                      lambda z: wn.mixture_log_prob(comps, z))
    draw = _checkerboard_tangent if spec.kind == "checkerboard" else _spiral_tangent

    def sample(count: int, seed) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
        return _push(draw(spec, count, rng), spec.radius)

    return Target(spec, sample)


def sample_dataset(spec: TargetSpec, count: int = 500, seed: int | None = None) -> np.ndarray:
    """Deterministic dataset of ``count`` points in Lorentz coordinates."""
    if count < 1:
        raise ValueError("count must be >= 1")
    target = make_target(spec)
    pts = target.sample(count, spec.seed if seed is None else seed)
    L.check_on_hyperboloid(pts, spec.radius)
    return pts
