"""Density grids in the Poincare disk, for plotting 2-D models."""

from __future__ import annotations

import numpy as np
import shapely

from . import lorentz as L
from . import training as T
from .flows import FlowStack


def disk_grid(resolution: int, radius: float) -> tuple[np.ndarray, float]:
    """Cell centres of a ``resolution`` x ``resolution`` grid on [-R, R]^2
    that fall strictly inside the disk, and the cell area."""
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    h = 2.0 * radius / resolution
    ticks = -radius + (np.arange(resolution) + 0.5) * h
    p1, p2 = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.stack([p1.ravel(), p2.ravel()], axis=1)
    return pts[np.sum(pts ** 2, axis=1) < radius ** 2], h * h


def poincare_log_density(stack: FlowStack, p: np.ndarray, data_radius: float) -> np.ndarray:
    """Model log-density with respect to Lebesgue measure on disk coordinates.

    log q(p) = log p_M(x(p)) + n log(2 R^2 / (R^2 - |p|^2)); the second term
    is the Riemannian volume element of the radius-R ball.
    """
    x = L.from_poincare(p, data_radius)
    lp = np.asarray(T.log_prob_data(stack, x, data_radius))
    return lp + L.poincare_log_volume(p, data_radius)


def density_grid(stack: FlowStack, resolution: int, data_radius: float):
    """(points, log_density, cell_area) on the disk grid."""
    if stack.dim != 2:
        raise ValueError(f"Poincare export needs dim == 2, stack has dim {stack.dim}")
    pts, area = disk_grid(resolution, data_radius)
    with np.errstate(over="ignore", divide="ignore"):
        logd = poincare_log_density(stack, pts, data_radius)
    return pts, logd, area


def hull_mass(points: np.ndarray, log_density: np.ndarray, cell_area: float,
              samples: np.ndarray, dilation: float = 0.1) -> float:
    """Fraction of the grid's integrated mass inside the convex hull of
    ``samples`` buffered by ``dilation``."""
    hull = shapely.MultiPoint(np.asarray(samples)).convex_hull.buffer(dilation)
    inside = shapely.contains_xy(hull, points[:, 0], points[:, 1])
    mass = np.exp(log_density) * cell_area
    return float(np.sum(mass[inside]) / np.sum(mass))
