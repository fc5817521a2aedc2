import math

import numpy as np
import pytest

from hypflow import lorentz as L
from hypflow import oracles
from hypflow import wrapped_normal as wn
from hypflow.errors import DimensionError, DomainError


def chart_grid(half_width, step):
    ticks = np.arange(-half_width + step / 2, half_width, step)
    u1, u2 = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([u1.ravel(), u2.ravel()], axis=1)


def chart_points(u, radius=1.0):
    """exp_o((0, u)) and the chart's volume factor (R sinh(r/R) / r)^(n-1)."""
    o = L.origin(u.shape[1], radius)
    v = np.concatenate([np.zeros((len(u), 1)), u], axis=1)
    r = np.linalg.norm(u, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(r > 0, radius * np.sinh(r / radius) / r, 1.0)
    return L.exp_map(o, v, radius, max_norm=None), factor ** (u.shape[1] - 1)


def test_chart_volume_factor_matches_fd_oracle():
    o = L.origin(2)
    for u in ([0.3, -0.2], [1.5, 2.0], [-4.0, 0.5]):
        _, factor = chart_points(np.array([u]))
        assert math.log(factor[0]) == pytest.approx(oracles.exp_map_volume(o, u), abs=1e-7)


def test_log_prob_at_mean_is_gaussian_peak():
    dist = wn.WrappedNormal.from_tangent([-1.0, 1.0], [1.0, 0.25])
    expected = -math.log(2 * math.pi) - math.log(0.25)
    assert dist.log_prob(dist.mu) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("mean,sigma,radius", [
    ([0.0, 0.0], [1.0, 1.0], 1.0),
    ([-1.0, 1.0], [1.0, 0.25], 1.0),
    ([0.5, 0.2], [0.7, 0.4], 2.0),
])
def test_density_integrates_to_one(mean, sigma, radius):
    dist = wn.WrappedNormal.from_tangent(mean, sigma, radius)
    u = chart_grid(8.0, 0.02)
    z, factor = chart_points(u, radius)
    mass = np.sum(np.exp(dist.log_prob(z)) * factor) * 0.02 ** 2
    assert abs(mass - 1.0) < 1e-2


def test_mixture_integrates_to_one():
    comps = [(0.3, wn.WrappedNormal.from_tangent([-1.0, 1.0], [0.5, 0.5])),
             (0.7, wn.WrappedNormal.from_tangent([1.0, -1.0], [0.5, 0.3]))]
    u = chart_grid(8.0, 0.02)
    z, factor = chart_points(u)
    mass = np.sum(np.exp(wn.mixture_log_prob(comps, z)) * factor) * 0.02 ** 2
    assert abs(mass - 1.0) < 1e-2


def test_mixture_special_cases():
    d = wn.WrappedNormal.from_tangent([0.4, -0.3], [0.6, 0.9])
    z = d.sample(20, 0)
    np.testing.assert_allclose(wn.mixture_log_prob([(1.0, d)], z), d.log_prob(z), atol=1e-12)
    a = wn.WrappedNormal.from_tangent([1.0, 0.5], [0.5, 0.5])
    b = wn.WrappedNormal.from_tangent([-1.0, -0.5], [0.5, 0.5])
    o = L.origin(2)
    assert wn.mixture_log_prob([(0.5, a), (0.5, b)], o) == pytest.approx(a.log_prob(o),
                                                                         abs=1e-12)
    with pytest.raises(DomainError):
        wn.mixture_log_prob([], z)
    with pytest.raises(DomainError):
        wn.mixture_log_prob([(0.4, a), (0.4, b)], z)


def test_samples_on_manifold_and_seeded():
    d = wn.WrappedNormal.from_tangent([-1.0, 1.0], [1.0, 0.25], 1.5)
    z = d.sample(1000, 7)
    L.check_on_hyperboloid(z, 1.5)
    np.testing.assert_array_equal(z, d.sample(1000, 7))
    assert not np.array_equal(z, d.sample(1000, 8))


def test_tiny_sigma_collapses_to_mean():
    d = wn.WrappedNormal.from_tangent([0.3, -0.7], [1e-12, 1e-12])
    np.testing.assert_allclose(d.sample(50, 0), np.broadcast_to(d.mu, (50, 3)), atol=1e-10)


def test_sample_mean_at_origin():
    count = 100_000
    z = wn.sample(L.origin(3), np.array([1.0, 0.5, 2.0]), count, 3)
    spatial = z[:, 1:]
    bound = 3 * spatial.std(axis=0) / math.sqrt(count)
    assert np.all(np.abs(spatial.mean(axis=0)) < bound)


@pytest.mark.parametrize("mean,sigma", [([0.0, 0.0], [1.0, 0.25]), ([-1.0, 1.0], [1.0, 0.25])])
def test_histogram_matches_density(mean, sigma):
    """Total variation between a 1e5-sample histogram in normal coordinates
    and the quadrature of log_prob over the same bins."""
    d = wn.WrappedNormal.from_tangent(mean, sigma)
    count, width, half = 100_000, 0.25, 6.0
    z = d.sample(count, 11)
    u = L.log_map(L.origin(2), z, max_norm=None)[:, 1:]
    edges = np.arange(-half, half + width / 2, width)
    hist, _, _ = np.histogram2d(u[:, 0], u[:, 1], bins=[edges, edges])
    hist = hist / count
    fine = 5
    pts = chart_grid(half, width / fine)
    zz, factor = chart_points(pts)
    cell = np.exp(d.log_prob(zz)) * factor * (width / fine) ** 2
    nb = len(edges) - 1
    quad = cell.reshape(nb, fine, nb, fine).sum(axis=(1, 3))
    tv = 0.5 * np.abs(hist - quad).sum() + 0.5 * max(0.0, 1.0 - quad.sum())
    assert tv < 0.05


def test_validation():
    with pytest.raises(DimensionError):
        wn.WrappedNormal(L.origin(2), np.ones(3))
    with pytest.raises(DomainError):
        wn.WrappedNormal(L.origin(2), np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        wn.WrappedNormal(np.array([2.0, 0.0, 0.0]), np.ones(2))
    with pytest.raises(DomainError):
        wn.sample(L.origin(2), np.ones(2), 0, 0)


def test_log_prob_is_differentiable_in_parameters():
    from hypflow import diffnet as D
    z = wn.WrappedNormal.from_tangent([0.2, 0.1], [0.5, 0.8]).sample(5, 2)

    def f(mean, log_sigma, radius):
        o = L.origin(2, radius)
        mu = L.exp_map(o, D.concat([np.zeros(1), mean]), radius)
        zz = L.lift_to_hyperboloid(D.getitem(z, (..., slice(1, None))), radius)
        return D.reduce_sum(wn.log_prob(zz, mu, D.exp(log_sigma), radius))

    args = [np.array([0.3, -0.2]), np.array([-0.1, 0.2]), np.array(1.3)]
    tape = D.Tape()
    leaves = [tape.leaf(a) for a in args]
    tape.backward(f(*leaves))
    for k, a in enumerate(args):
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in args]
            minus = [x.copy() for x in args]
            plus[k][idx] += 1e-6
            minus[k][idx] -= 1e-6
            fd = (f(*plus) - f(*minus)) / 2e-6
            assert tape.grad(leaves[k])[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)
