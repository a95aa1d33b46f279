import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from fgbridge import (
    RingMixtureParams,
    SampleBatch,
    augment_with_standard_normal,
    gaussian_target,
    ring_benchmark_pair,
    ring_mixture_target,
    t_mixture_target,
)
from fgbridge.densities import ring_log_z
from fgbridge.errors import ParameterError


def fd_score(target, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (target.log_unnorm(x + e) - target.log_unnorm(x - e)) / (2 * h)
    return g


# -- Gaussian -------------------------------------------------------------


def test_gaussian_log_z_matches_quadrature():
    q = gaussian_target([0.5], [2.0])
    val, _ = integrate.quad(lambda x: math.exp(q.log_unnorm(np.array([x]))), -40, 40)
    assert math.log(val) == pytest.approx(q.exact_log_z, abs=1e-10)


def test_gaussian_rejects_bad_variance():
    with pytest.raises(ParameterError):
        gaussian_target([0.0, 1.0], [1.0, -1.0])


@given(st.floats(-5, 5), st.floats(0.1, 5))
@settings(max_examples=25, deadline=None)
def test_gaussian_score_matches_fd(m, v):
    q = gaussian_target([m, -m], [v, 2 * v])
    x = np.array([0.3, -1.1])
    assert np.allclose(q.score(x), fd_score(q, x), rtol=1e-5, atol=1e-6)


# -- rings ----------------------------------------------------------------


@pytest.mark.parametrize("s,sigma", [(3.0, 1.0), (6.0, 2.0), (1.0, 1.5)])
def test_ring_log_z_matches_2d_quadrature(s, sigma):
    params = RingMixtureParams(2, (2.0, 2.0), (-2.0, -2.0), s, sigma)
    q = ring_mixture_target(params)
    # each ring component integrates separately in polar coordinates; check the
    # full mixture on a fine grid instead
    axis = np.linspace(-14, 14, 1401)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    vals = np.exp(q.log_unnorm(np.stack([xx, yy], axis=-1)))
    z = integrate.trapezoid(integrate.trapezoid(vals, axis, axis=1), axis)
    assert math.log(z) == pytest.approx(q.exact_log_z, rel=1e-6, abs=1e-6)


def test_ring_log_z_scales_with_pairs():
    a = ring_log_z(RingMixtureParams(2, s=3.0, sigma=1.0))
    b = ring_log_z(RingMixtureParams(12, s=3.0, sigma=1.0))
    assert b == pytest.approx(6 * a, rel=1e-14)


def test_ring_dimension_must_be_even():
    with pytest.raises(ParameterError):
        RingMixtureParams(3)


def test_ring_angle_is_uniform(rng):
    q = ring_mixture_target(RingMixtureParams(2, (0.0, 0.0), (0.0, 0.0), 3.0, 1.0))
    x = q.sample(rng, 4000).points
    angle = np.arctan2(x[:, 1], x[:, 0])
    assert stats.kstest(angle, stats.uniform(-math.pi, 2 * math.pi).cdf).pvalue > 0.01


def test_ring_squared_radius_is_truncated_normal(rng):
    s, sigma = 1.0, 1.5
    q = ring_mixture_target(RingMixtureParams(2, (0.0, 0.0), (0.0, 0.0), s, sigma))
    t = np.sum(q.sample(rng, 4000).points ** 2, axis=1)
    dist = stats.truncnorm((0 - s) / sigma, np.inf, loc=s, scale=sigma)
    assert stats.kstest(t, dist.cdf).pvalue > 0.01


def test_ring_sampler_matches_density_histogram(rng):
    # chi-square goodness of fit of draws against the normalized density on a grid
    q, _ = ring_benchmark_pair(2)
    x = q.sample(rng, 20000).points
    edges = np.linspace(-5, 5, 11)
    counts, _, _ = np.histogram2d(x[:, 0], x[:, 1], bins=[edges, edges])
    fine = np.linspace(-5, 5, 401)
    xx, yy = np.meshgrid(fine, fine, indexing="ij")
    dens = np.exp(q.log_unnorm(np.stack([xx, yy], -1)) - q.exact_log_z)
    probs = np.empty((10, 10))
    for i in range(10):
        for j in range(10):
            sl = (slice(40 * i, 40 * i + 41), slice(40 * j, 40 * j + 41))
            probs[i, j] = integrate.trapezoid(integrate.trapezoid(dens[sl], fine[sl[1]], axis=1), fine[sl[0]])
    expected = probs.ravel() * len(x)
    keep = expected > 5
    observed = counts.ravel()[keep]
    expected = expected[keep] * observed.sum() / expected[keep].sum()
    chi2 = np.sum((observed - expected) ** 2 / expected)
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.01


def test_ring_score_matches_fd(rng):
    q, q2 = ring_benchmark_pair(4)
    for target in (q, q2):
        for x in target.sample(rng, 5).points:
            assert np.allclose(target.score(x), fd_score(target, x), rtol=1e-5, atol=1e-5)


def test_ring_batch_and_single_point_agree(rng):
    q, _ = ring_benchmark_pair(6)
    x = q.sample(rng, 7).points
    batch = q.log_unnorm(x)
    single = np.array([q.log_unnorm(row) for row in x])
    assert np.array_equal(batch, single)


def test_benchmark_pair_centres():
    q1, q2 = ring_benchmark_pair(2)
    assert q1.log_unnorm(np.array([2.0 + math.sqrt(3.0), 2.0])) > q1.log_unnorm(np.array([2.0, 2.0]))
    # the second mixture peaks on rings of squared radius 6 around (3,-3)
    assert q2.log_unnorm(np.array([3.0 + math.sqrt(6.0), -3.0])) == pytest.approx(math.log(0.5), abs=1e-6)
    _, demo = ring_benchmark_pair(2, "demo")
    assert demo.log_unnorm(np.array([2.0 + math.sqrt(6.0), -2.0])) == pytest.approx(math.log(0.5), abs=1e-6)


# -- multivariate t -------------------------------------------------------


def test_t_mixture_cauchy_normalizer_by_quadrature():
    # nu=1 in 1-d has polynomial tails; integrate on a log-spaced grid
    q = t_mixture_target([0.3, 0.7], [[-1.0], [2.0]], [[1.5]], 1.0)
    tail = np.logspace(-3, 9, 20001)
    grid = np.concatenate([-tail[::-1], [0.0], tail])
    vals = np.exp(q.log_unnorm(grid[:, None]))
    total = integrate.trapezoid(vals, grid)
    # the tails beyond 1e9 carry about 2 * C / (pi * 1e9 / sqrt(1.5)) of mass
    assert math.log(total) == pytest.approx(q.exact_log_z, abs=1e-4)


def test_t_mixture_large_nu_is_gaussian(rng):
    # as nu grows the component tends to the Gaussian; KL by Monte Carlo
    mean = np.array([0.5, -0.5])
    scale = np.array([[1.0, 0.3], [0.3, 2.0]])
    q = t_mixture_target([1.0], [mean], scale, 1e6)
    x = rng.multivariate_normal(mean, scale, size=20000)
    log_gauss = stats.multivariate_normal(mean, scale).logpdf(x)
    log_t = q.log_unnorm(x) - q.exact_log_z
    kl = float(np.mean(log_gauss - log_t))
    assert abs(kl) < 1e-4


def test_t_mixture_score_matches_fd(rng):
    q = t_mixture_target([0.4, 0.6], [[0.0, 1.0], [2.0, -1.0]], [[1.0, 0.2], [0.2, 0.5]], 4.0)
    for x in rng.normal(size=(4, 2)):
        assert np.allclose(q.score(x), fd_score(q, x), rtol=1e-5, atol=1e-6)


def test_t_mixture_sampler_marginal(rng):
    q = t_mixture_target([1.0], [[1.0]], [[4.0]], 5.0)
    x = q.sample(rng, 5000).points[:, 0]
    assert stats.kstest(x, stats.t(5.0, loc=1.0, scale=2.0).cdf).pvalue > 0.01


def test_t_mixture_validation():
    with pytest.raises(ParameterError):
        t_mixture_target([0.5, 0.6], [[0.0], [1.0]], [[1.0]], 3.0)
    with pytest.raises(ParameterError):
        t_mixture_target([1.0], [[0.0, 0.0]], [[1.0, 2.0], [2.0, 1.0]], 3.0)


# -- augmentation and batches ---------------------------------------------


def test_augmentation_keeps_normalizer():
    base = gaussian_target([0.0], [1.0])
    aug = augment_with_standard_normal(base, 1)
    assert aug.dim == 2
    assert aug.exact_log_z == base.exact_log_z
    axis = np.linspace(-12, 12, 801)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    vals = np.exp(aug.log_unnorm(np.stack([xx, yy], -1)))
    z = integrate.trapezoid(integrate.trapezoid(vals, axis, axis=1), axis)
    assert math.log(z) == pytest.approx(base.exact_log_z, abs=1e-8)


def test_augmented_sampler_and_score(rng):
    aug = augment_with_standard_normal(gaussian_target([3.0], [0.25]), 2)
    x = aug.sample(rng, 4000).points
    assert x.shape == (4000, 3)
    assert abs(x[:, 0].mean() - 3.0) < 0.05 and abs(x[:, 1:].std() - 1.0) < 0.05
    pt = np.array([2.5, 0.1, -0.7])
    assert np.allclose(aug.score(pt), fd_score(aug, pt), rtol=1e-6)


def test_sample_batch_validation():
    with pytest.raises(ParameterError):
        SampleBatch(np.array([[0.0, np.nan]]))
    b = SampleBatch(np.arange(3.0))
    assert b.points.shape == (3, 1) and len(b) == 3 and b.dim == 1
