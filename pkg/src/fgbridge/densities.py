"""Unnormalized target densities with exact samplers and log normalizers.

Every density here works on batches: ``log_unnorm`` maps an array of shape
``(..., dim)`` to ``(...)``, and ``score`` (the gradient of ``log_unnorm``
with respect to the point) maps ``(..., dim)`` to ``(..., dim)``. Samplers
take a ``numpy.random.Generator`` and a count and return ``(count, dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.special import gammaln, log_ndtr, logsumexp

from .errors import ParameterError

LOG_2PI = np.log(2.0 * np.pi)

LogDensityFn = Callable[[np.ndarray], np.ndarray]
ScoreFn = Callable[[np.ndarray], np.ndarray]
SamplerFn = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class TargetDensity:
    """An unnormalized log density on ``R^dim``.

    Attributes
    ----------
    dim : int
        Dimension of the support.
    log_unnorm : callable
        ``x -> log q~(x)`` on arrays of shape ``(..., dim)``.
    exact_log_z : float or None
        Natural log of the normalizing constant, when known in closed form.
    sampler : callable or None
        ``(rng, n) -> (n, dim)`` exact draws from the normalized density.
    score : callable or None
        Gradient of ``log_unnorm``; needed to train a flow against this target.
    name : str
        Identifier carried into :class:`SampleBatch` objects.
    """

    dim: int
    log_unnorm: LogDensityFn
    exact_log_z: Optional[float] = None
    sampler: Optional[SamplerFn] = None
    score: Optional[ScoreFn] = None
    name: str = "target"

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ParameterError(f"dim must be a positive integer, got {self.dim!r}")

    def sample(self, rng: np.random.Generator, n: int) -> "SampleBatch":
        if self.sampler is None:
            raise ParameterError(f"target {self.name!r} has no exact sampler")
        return SampleBatch(self.sampler(rng, int(n)), self.name)


@dataclass(frozen=True)
class SampleBatch:
    """Draws from one density, stored row-wise as an ``(n, dim)`` array."""

    points: np.ndarray
    source_id: str = "unknown"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ParameterError(f"a sample batch needs shape (n>=1, dim), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("sample batch contains non-finite entries")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def as_points(batch) -> np.ndarray:
    """Return the ``(n, dim)`` array behind a :class:`SampleBatch` or array."""
    if isinstance(batch, SampleBatch):
        return batch.points
    pts = np.asarray(batch, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


# ---------------------------------------------------------------------------
# Gaussian


def gaussian_target(mean, cov_diag, name: str = "gaussian") -> TargetDensity:
    """Axis-aligned Gaussian ``exp(-sum (x-m)^2 / (2 v))`` with known ``Z``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    var = np.atleast_1d(np.asarray(cov_diag, dtype=float))
    if mean.shape != var.shape or mean.ndim != 1:
        raise ParameterError("mean and cov_diag must be vectors of equal length")
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise ParameterError("cov_diag entries must be finite and positive")
    dim = mean.size
    log_z = 0.5 * dim * LOG_2PI + 0.5 * float(np.sum(np.log(var)))
    std = np.sqrt(var)

    def log_unnorm(x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.sum((x - mean) ** 2 / var, axis=-1)

    def score(x):
        return -(np.asarray(x, dtype=float) - mean) / var

    def sampler(rng, n):
        return mean + std * rng.standard_normal((n, dim))

    return TargetDensity(dim, log_unnorm, log_z, sampler, score, name)


# ---------------------------------------------------------------------------
# Mixture of rings


@dataclass(frozen=True)
class RingMixtureParams:
    """Per-block two-ring mixture: centres ``mu1, mu2``, radius ``s``, width ``sigma``.

    ``s`` is the mode of the *squared* distance to the centre.
    """

    dim: int
    mu1: tuple = (2.0, 2.0)
    mu2: tuple = (-2.0, -2.0)
    s: float = 3.0
    sigma: float = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2 or self.dim % 2:
            raise ParameterError(f"ring mixture dimension must be even and positive, got {self.dim}")
        if not self.s > 0 or not self.sigma > 0:
            raise ParameterError("ring radius s and thickness sigma must be positive")
        for mu in (self.mu1, self.mu2):
            if np.asarray(mu).shape != (2,):
                raise ParameterError("ring centres must be points in R^2")


def ring_log_z(params: RingMixtureParams) -> float:
    """``(p/2) * [0.5 log(2 pi^3 sigma^2) + log Phi(s/sigma)]``."""
    blocks = params.dim // 2
    per_block = 0.5 * np.log(2.0 * np.pi**3 * params.sigma**2) + log_ndtr(params.s / params.sigma)
    return float(blocks * per_block)


def _sample_ring_radius_sq(rng, n, s, sigma):
    # Squared radius t ~ Normal(s, sigma^2) truncated to t > 0, by rejection.
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        draw = s + sigma * rng.standard_normal(max(16, int(need * 1.2) + 8))
        draw = draw[draw > 0][:need]
        out[filled:filled + draw.size] = draw
        filled += draw.size
    return out


def ring_mixture_target(params: RingMixtureParams, name: str = "rings") -> TargetDensity:
    """Product over coordinate pairs of an equal-weight two-ring mixture."""
    if not isinstance(params, RingMixtureParams):
        raise ParameterError("expected RingMixtureParams")
    p = params.dim
    mus = np.array([params.mu1, params.mu2], dtype=float)  # (2, 2)
    s, sig2 = float(params.s), float(params.sigma) ** 2
    log_half = np.log(0.5)

    def _components(x):
        blocks = np.asarray(x, dtype=float).reshape(x.shape[:-1] + (p // 2, 1, 2))
        diff = blocks - mus  # (..., p/2, 2, 2)
        dev = np.sum(diff**2, axis=-1) - s  # (..., p/2, 2)
        return diff, dev, -dev**2 / (2.0 * sig2)

    def log_unnorm(x):
        x = np.asarray(x, dtype=float)
        _, _, comp = _components(x)
        return np.sum(np.logaddexp(comp[..., 0], comp[..., 1]) + log_half, axis=-1)

    def score(x):
        x = np.asarray(x, dtype=float)
        diff, dev, comp = _components(x)
        w = np.exp(comp - np.logaddexp(comp[..., :1], comp[..., 1:]))
        grad = np.sum(w[..., None] * (-2.0 * dev / sig2)[..., None] * diff, axis=-2)
        return grad.reshape(x.shape)

    def sampler(rng, n):
        m = n * (p // 2)
        which = rng.integers(0, 2, size=m)
        radius = np.sqrt(_sample_ring_radius_sq(rng, m, s, params.sigma))
        angle = rng.uniform(0.0, 2.0 * np.pi, size=m)
        pts = mus[which] + radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])
        return pts.reshape(n, p)

    return TargetDensity(p, log_unnorm, ring_log_z(params), sampler, score, name)


def ring_benchmark_pair(dim: int, variant: str = "main"):
    """The two ring mixtures of the rings benchmark in dimension ``dim``.

    ``variant="main"`` puts the second mixture's centres at (3,-3), (-3,3);
    ``variant="demo"`` uses (2,-2), (-2,2), the setting used to illustrate
    the stabilizing effect of the likelihood terms.
    """
    if variant == "main":
        c = 3.0
    elif variant == "demo":
        c = 2.0
    else:
        raise ParameterError(f"unknown ring benchmark variant {variant!r}")
    q1 = ring_mixture_target(RingMixtureParams(dim, (2.0, 2.0), (-2.0, -2.0), 3.0, 1.0), "rings_q1")
    q2 = ring_mixture_target(RingMixtureParams(dim, (c, -c), (-c, c), 6.0, 2.0), "rings_q2")
    return q1, q2


# ---------------------------------------------------------------------------
# Mixture of multivariate t


def t_component_log_z(dim: int, scale_logdet: float, nu: float) -> float:
    return float(
        gammaln(0.5 * (nu + dim)) - gammaln(0.5 * nu)
        - 0.5 * dim * np.log(nu) - 0.5 * dim * np.log(np.pi) - 0.5 * scale_logdet
    )


def t_mixture_target(weights, means, scale, nu: float, name: str = "t_mixture") -> TargetDensity:
    """Mixture of multivariate t components sharing one scale matrix and ``nu``.

    The unnormalized density is ``sum_k w_k * C * p_t(x; mu_k, scale, nu)``
    where ``C`` is the common component constant, so that the normalizing
    constant of the returned density equals ``C`` itself.
    """
    w = np.asarray(weights, dtype=float).ravel()
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    if mu.shape[0] != w.size:
        raise ParameterError("need one mean per mixture weight")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ParameterError("mixture weights must be a probability vector")
    dim = mu.shape[1]
    S = np.atleast_2d(np.asarray(scale, dtype=float))
    if S.shape != (dim, dim) or not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ParameterError("scale must be a symmetric dim x dim matrix")
    try:
        chol = linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        raise ParameterError("scale matrix is not positive definite") from exc
    if not nu > 0:
        raise ParameterError("degrees of freedom must be positive")
    nu = float(nu)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    log_c = t_component_log_z(dim, logdet, nu)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    prec = linalg.cho_solve((chol, True), np.eye(dim))
    expo = 0.5 * (nu + dim)

    def _maha(x):
        diff = np.asarray(x, dtype=float)[..., None, :] - mu  # (..., K, dim)
        sol = diff @ prec
        return diff, sol, np.sum(sol * diff, axis=-1)

    def log_unnorm(x):
        _, _, delta = _maha(x)
        comp = log_w - expo * np.log1p(delta / nu)
        return 2.0 * log_c + logsumexp(comp, axis=-1)

    def score(x):
        _, sol, delta = _maha(x)
        comp = log_w - expo * np.log1p(delta / nu)
        resp = np.exp(comp - logsumexp(comp, axis=-1, keepdims=True))
        per = -2.0 * expo * sol / (nu + delta)[..., None]
        return np.sum(resp[..., None] * per, axis=-2)

    def sampler(rng, n):
        k = rng.choice(w.size, size=n, p=w)
        z = rng.standard_normal((n, dim)) @ chol.T
        g = rng.chisquare(nu, size=n)
        return mu[k] + z * np.sqrt(nu / g)[:, None]

    return TargetDensity(dim, log_unnorm, log_c, sampler, score, name)


# ---------------------------------------------------------------------------
# Dimension augmentation


def augment_with_standard_normal(base: TargetDensity, extra_dims: int) -> TargetDensity:
    """Append ``extra_dims`` independent standard normal coordinates.

    The appended factor is normalized, so ``exact_log_z`` is copied unchanged.
    """
    if int(extra_dims) != extra_dims or extra_dims < 1:
        raise ParameterError("extra_dims must be a positive integer")
    extra_dims = int(extra_dims)
    d0 = base.dim
    const = -0.5 * LOG_2PI * extra_dims

    def log_unnorm(x):
        x = np.asarray(x, dtype=float)
        theta = x[..., d0:]
        return base.log_unnorm(x[..., :d0]) - 0.5 * np.sum(theta**2, axis=-1) + const

    score = None
    if base.score is not None:
        def score(x):
            x = np.asarray(x, dtype=float)
            return np.concatenate([base.score(x[..., :d0]), -x[..., d0:]], axis=-1)

    sampler = None
    if base.sampler is not None:
        def sampler(rng, n):
            head = np.asarray(base.sampler(rng, n)).reshape(n, d0)
            return np.hstack([head, rng.standard_normal((n, extra_dims))])

    return TargetDensity(
        d0 + extra_dims, log_unnorm, base.exact_log_z, sampler, score,
        f"{base.name}+N(0,I_{extra_dims})",
    )
