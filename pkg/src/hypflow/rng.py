"""Seeded random streams.

The generator is numpy's Philox4x64 counter-based bit generator; Gaussian
variates come from the Box-Muller transform applied to its uniform doubles,
so draws depend only on the seed and not on numpy's internal normal sampler.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws via Box-Muller (cosine and sine halves)."""
    shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    size = int(np.prod(shape))
    half = (size + 1) // 2
    u1 = rng.random(half)
    u2 = rng.random(half)
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:size]
    return z.reshape(shape)
