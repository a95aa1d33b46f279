"""f-divergence generators and the scalar variational bound.

For a generator ``f`` and a candidate ratio ``r~`` the empirical bound is::

    G_f(r~) = mean_{x ~ q1} f'(u(x)) - mean_{x ~ q2} (f* o f')(u(x)),
    u(x) = q~1(x) / (q~2(x) r~)

Everything is evaluated from ``ell = log u`` so that ratios like ``e^700``
never materialize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .densities import TargetDensity, as_points
from .errors import DensityEvaluationError, ParameterError, SaturationError
from .optimize import maximize_scalar

SATURATION_GAP = 1e-12


@dataclass(frozen=True)
class GeneratorFunction:
    """A strictly convex ``f`` with ``f(1) = 0`` plus its log-space companions.

    ``f``, ``f_prime``, ``f_double_prime`` and ``conjugate_of_fprime`` take the
    ratio ``u > 0``. The ``*_log`` variants take ``ell = log u`` and are what
    the estimators use. ``perspective(l1, l2)`` returns ``q2 f(q1/q2)`` from
    log densities, for quadrature.
    """

    name: str
    f: Callable
    f_prime: Callable
    f_double_prime: Callable
    conjugate_of_fprime: Callable
    fprime_log: Callable
    conj_log: Callable
    log_fpp_log: Callable
    perspective: Callable
    pi: Optional[float] = None


def _check_pi(pi):
    if pi is None or not 0.0 < pi < 1.0:
        raise ParameterError(f"weight pi must lie in (0, 1), got {pi!r}")
    return float(pi)


def _harmonic(pi):
    pi = _check_pi(pi)
    lp, lq = math.log(pi), math.log1p(-pi)

    def a_of(ell):
        return np.logaddexp(lp, lq + ell)

    def f(u):
        u = np.asarray(u, dtype=float)
        return 1.0 - u / (pi + (1 - pi) * u)

    def fp(u):
        return -pi / (pi + (1 - pi) * np.asarray(u, dtype=float)) ** 2

    def fpp(u):
        return 2 * pi * (1 - pi) / (pi + (1 - pi) * np.asarray(u, dtype=float)) ** 3

    def conj(u):
        u = np.asarray(u, dtype=float)
        return -1.0 + (1 - pi) * u**2 / (pi + (1 - pi) * u) ** 2

    def fp_log(ell):
        return -pi * np.exp(-2.0 * a_of(ell))

    def conj_log(ell):
        ell = np.asarray(ell, dtype=float)
        return -1.0 + np.exp(lq + 2.0 * (ell - a_of(ell)))

    def log_fpp_log(ell):
        return math.log(2 * pi * (1 - pi)) - 3.0 * a_of(ell)

    def persp(l1, l2):
        l1, l2 = np.asarray(l1, float), np.asarray(l2, float)
        return np.exp(l2) - np.exp(l1 + l2 - np.logaddexp(lp + l2, lq + l1))

    return GeneratorFunction("harmonic", f, fp, fpp, conj, fp_log, conj_log, log_fpp_log, persp, pi)


def _kl():
    def f(u):
        u = np.asarray(u, dtype=float)
        return u * np.log(u)

    def fp(u):
        return 1.0 + np.log(u)

    def fpp(u):
        return 1.0 / np.asarray(u, dtype=float)

    def conj(u):
        return np.asarray(u, dtype=float) + 0.0

    def persp(l1, l2):
        l1, l2 = np.asarray(l1, float), np.asarray(l2, float)
        return np.exp(l1) * (l1 - l2)

    return GeneratorFunction(
        "kl", f, fp, fpp, conj,
        lambda ell: 1.0 + np.asarray(ell, dtype=float),
        lambda ell: np.exp(ell),
        lambda ell: -np.asarray(ell, dtype=float),
        persp,
    )


def _reverse_kl():
    def f(u):
        return -np.log(u)

    def fp(u):
        return -1.0 / np.asarray(u, dtype=float)

    def fpp(u):
        return 1.0 / np.asarray(u, dtype=float) ** 2

    def conj(u):
        return -1.0 + np.log(u)

    def persp(l1, l2):
        l1, l2 = np.asarray(l1, float), np.asarray(l2, float)
        return np.exp(l2) * (l2 - l1)

    return GeneratorFunction(
        "reverse_kl", f, fp, fpp, conj,
        lambda ell: -np.exp(-np.asarray(ell, dtype=float)),
        lambda ell: -1.0 + np.asarray(ell, dtype=float),
        lambda ell: -2.0 * np.asarray(ell, dtype=float),
        persp,
    )


def _js(pi):
    pi = _check_pi(pi)
    lp, lq = math.log(pi), math.log1p(-pi)

    def b_of(ell):
        return np.logaddexp(lq, lp + ell)

    def f(u):
        u = np.asarray(u, dtype=float)
        m = 1 - pi + pi * u
        return pi * u * np.log(u) - m * np.log(m)

    def fp(u):
        u = np.asarray(u, dtype=float)
        return pi * np.log(u / (1 - pi + pi * u))

    def fpp(u):
        u = np.asarray(u, dtype=float)
        return pi * (1 - pi) / (u * (1 - pi + pi * u))

    def conj(u):
        return (1 - pi) * np.log(1 - pi + pi * np.asarray(u, dtype=float))

    def persp(l1, l2):
        l1, l2 = np.asarray(l1, float), np.asarray(l2, float)
        m = np.logaddexp(lq + l2, lp + l1)
        return pi * np.exp(l1) * (l1 - l2) - np.exp(m) * (m - l2)

    return GeneratorFunction(
        "js", f, fp, fpp, conj,
        lambda ell: pi * (np.asarray(ell, dtype=float) - b_of(ell)),
        lambda ell: (1 - pi) * b_of(ell),
        lambda ell: math.log(pi * (1 - pi)) - np.asarray(ell, dtype=float) - b_of(ell),
        persp, pi,
    )


def _sq_hellinger():
    def f(u):
        return (np.sqrt(u) - 1.0) ** 2

    def fp(u):
        return 1.0 - 1.0 / np.sqrt(u)

    def fpp(u):
        return 0.5 * np.asarray(u, dtype=float) ** -1.5

    def conj(u):
        return np.sqrt(u) - 1.0

    def persp(l1, l2):
        return (np.exp(0.5 * np.asarray(l1, float)) - np.exp(0.5 * np.asarray(l2, float))) ** 2

    return GeneratorFunction(
        "sq_hellinger", f, fp, fpp, conj,
        lambda ell: 1.0 - np.exp(-0.5 * np.asarray(ell, dtype=float)),
        lambda ell: np.exp(0.5 * np.asarray(ell, dtype=float)) - 1.0,
        lambda ell: math.log(0.5) - 1.5 * np.asarray(ell, dtype=float),
        persp,
    )


def make_generator(kind: str, pi: Optional[float] = None) -> GeneratorFunction:
    """Build one of ``harmonic``, ``kl``, ``reverse_kl``, ``js``, ``sq_hellinger``.

    ``harmonic`` and ``js`` need the weight ``pi`` in (0, 1).
    """
    if kind == "harmonic":
        return _harmonic(pi)
    if kind == "js":
        return _js(pi)
    if kind == "kl":
        return _kl()
    if kind == "reverse_kl":
        return _reverse_kl()
    if kind == "sq_hellinger":
        return _sq_hellinger()
    raise ParameterError(f"unknown generator kind {kind!r}")


# ---------------------------------------------------------------------------
# Empirical objective


def log_ratios(log_q1, log_q2, batch) -> np.ndarray:
    """``log q~1(x) - log q~2(x)`` at each row, refusing non-finite values."""
    pts = as_points(batch)
    l1 = np.asarray(log_q1(pts), dtype=float)
    l2 = np.asarray(log_q2(pts), dtype=float)
    d = l1 - l2
    bad = np.flatnonzero(~np.isfinite(d))
    if bad.size:
        i = int(bad[0])
        raise DensityEvaluationError(
            f"non-finite log density at sample index {i} (log q1={l1[i]}, log q2={l2[i]})", i
        )
    return d


def objective_from_log_ratios(gen: GeneratorFunction, d1, d2, log_r_tilde: float) -> float:
    """``G_f`` given log ratios on the q1 draws (``d1``) and q2 draws (``d2``)."""
    ell1 = np.asarray(d1, dtype=float) - log_r_tilde
    ell2 = np.asarray(d2, dtype=float) - log_r_tilde
    with np.errstate(over="ignore"):
        return float(np.mean(gen.fprime_log(ell1)) - np.mean(gen.conj_log(ell2)))


def harmonic_log_gap(pi: float, d1, d2, log_r_tilde):
    """``log(1 - G_pi(r~))`` for the harmonic generator, by log-sum-exp.

    ``1 - G_pi`` is a sum of positive terms, so the gap is exact even when
    ``G_pi`` is within machine epsilon of 1. ``log_r_tilde`` may be an array;
    the result then has the same shape.
    """
    lp, lq = math.log(pi), math.log1p(-pi)
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    lr = np.asarray(log_r_tilde, dtype=float)[..., None]
    ell1 = d1 - lr
    ell2 = d2 - lr
    t1 = lp - 2.0 * np.logaddexp(lp, lq + ell1) - math.log(d1.size)
    t2 = lq + 2.0 * (ell2 - np.logaddexp(lp, lq + ell2)) - math.log(d2.size)
    return logsumexp(np.concatenate([t1, t2], axis=-1), axis=-1)


def variational_objective(gen: GeneratorFunction, log_q1, log_q2, log_r_tilde: float, s1, s2) -> float:
    """Empirical variational lower bound ``G_f(r~)`` on ``D_f(q1, q2)``."""
    if len(as_points(s1)) < 1 or len(as_points(s2)) < 1:
        raise ParameterError("both sample batches must be non-empty")
    d1 = log_ratios(log_q1, log_q2, s1)
    d2 = log_ratios(log_q1, log_q2, s2)
    return objective_from_log_ratios(gen, d1, d2, log_r_tilde)


# ---------------------------------------------------------------------------
# Harmonic divergence and RE^2


@dataclass(frozen=True)
class DivergenceEstimate:
    """Maximized harmonic bound: value, its argmax in ``log r~`` and sample sizes.

    ``log_gap`` is ``log(1 - value)`` computed without cancellation.
    """

    value: float
    maximizer_log_r: float
    n1: int
    n2: int
    log_gap: float
    at_boundary: bool = False

    @property
    def saturated(self) -> bool:
        return self.log_gap < math.log(SATURATION_GAP)


def default_log_r_bracket(d1, d2, half_width: float = 30.0):
    m = float(np.median(np.concatenate([np.asarray(d1, float), np.asarray(d2, float)])))
    return m - half_width, m + half_width


def harmonic_divergence_from_log_ratios(pi, d1, d2, log_r_bracket=None, grid_points=64, xtol=1e-6):
    """Maximize the harmonic bound over ``log r~`` given precomputed log ratios.

    Maximizing ``G`` is the same as minimizing ``log(1 - G)``; the latter is
    what is searched, which keeps the saturated regime resolvable.
    """
    pi = _check_pi(pi)
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    lo, hi = default_log_r_bracket(d1, d2) if log_r_bracket is None else map(float, log_r_bracket)
    if not lo < hi:
        raise ParameterError("log r bracket must satisfy lo < hi")
    x, neg_gap, at_boundary = maximize_scalar(
        lambda lr: -harmonic_log_gap(pi, d1, d2, lr), lo, hi, grid_points=grid_points, xtol=xtol
    )
    gap = -neg_gap
    return DivergenceEstimate(-math.expm1(gap), x, d1.size, d2.size, gap, at_boundary)


def estimate_harmonic_divergence(pi, log_q1, log_q2, s1, s2, log_r_bracket=None) -> DivergenceEstimate:
    """Estimate ``H_pi(q1, q2)`` by maximizing the scalar variational bound.

    The maximizer is a consistent estimate of ``log(Z1/Z2)``; ``at_boundary``
    flags a maximizer sitting on the bracket edge (bracket too narrow).
    """
    d1 = log_ratios(log_q1, log_q2, s1)
    d2 = log_ratios(log_q1, log_q2, s2)
    return harmonic_divergence_from_log_ratios(pi, d1, d2, log_r_bracket)


def re2_from_log_gap(log_gap: float, n_total: int, s2: float) -> float:
    """``(s1 s2 n)^-1 ((1-H)^-1 - 1)`` from ``log(1-H)``; inf once saturated."""
    if log_gap < math.log(SATURATION_GAP):
        return math.inf
    s1 = 1.0 - s2
    return math.expm1(-log_gap) / (s1 * s2 * n_total)


def estimate_re2(pi: float, n_total: int, divergence: DivergenceEstimate, strict: bool = False) -> float:
    """First-order relative MSE of the optimal bridge estimate (``= MSE(log r)``).

    ``pi`` is the sample fraction ``n2 / n``. A saturated divergence returns
    ``inf``, or raises :class:`SaturationError` when ``strict`` is set.
    """
    pi = _check_pi(pi)
    if n_total != divergence.n1 + divergence.n2:
        raise ParameterError(
            f"n_total={n_total} does not match divergence sample counts "
            f"{divergence.n1}+{divergence.n2}"
        )
    if divergence.saturated or divergence.value >= 1.0:
        if strict:
            raise SaturationError(f"harmonic divergence estimate {divergence.value!r} is saturated")
        return math.inf
    return re2_from_log_gap(divergence.log_gap, n_total, pi)


def re2_first_order(h: float, n_total: int, s2: float) -> float:
    """Leading term of RE^2 of the optimal bridge for a known ``H_{s2}``."""
    s1 = 1.0 - s2
    return (1.0 / (1.0 - h) - 1.0) / (s1 * s2 * n_total)


def re2_upper_bounds(js: float, kl12: float, kl21: float, n_total: int, s2: float, pi: Optional[float] = None):
    """Upper bounds on first-order RE^2 from JS_pi and both KL divergences.

    Returns a dict with keys ``js``, ``kl_forward`` and ``kl_backward``; a
    bound is ``inf`` once its ``min(1, .)`` clamp is active.
    """
    s1 = 1.0 - s2
    pi = s1 if pi is None else pi
    scale = 1.0 / (s1 * s2 * n_total)

    def bound(m):
        m = min(1.0, m)
        return math.inf if m >= 1.0 else scale * ((1.0 - m) ** -2 - 1.0)

    return {
        "js": bound(math.sqrt(max(js, 0.0) / min(pi, 1.0 - pi))),
        "kl_forward": bound(math.sqrt(2.0 * max(kl12, 0.0))),
        "kl_backward": bound(math.sqrt(2.0 * max(kl21, 0.0))),
    }


# ---------------------------------------------------------------------------
# Quadrature oracles (dim <= 2)


def _grid(q1: TargetDensity, q2: TargetDensity, half_width, points):
    if q1.exact_log_z is None or q2.exact_log_z is None:
        raise ParameterError("quadrature needs exact_log_z on both targets")
    if q1.dim != q2.dim:
        raise ParameterError("targets must share a dimension")
    if q1.dim > 2:
        raise NotImplementedError("quadrature oracle supports dim <= 2 only")
    axis = np.linspace(-half_width, half_width, points)
    h = axis[1] - axis[0]
    if q1.dim == 1:
        pts = axis[:, None]
        weights = np.full(points, h)
        weights[[0, -1]] *= 0.5
    else:
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        w1 = np.full(points, h)
        w1[[0, -1]] *= 0.5
        weights = np.outer(w1, w1).ravel()
    l1 = q1.log_unnorm(pts) - q1.exact_log_z
    l2 = q2.log_unnorm(pts) - q2.exact_log_z
    return l1, l2, weights


def quadrature_divergence_oracle(gen, q1, q2, half_width=20.0, points=None) -> float:
    """``D_f(q1, q2)`` by trapezoid quadrature of the normalized densities.

    Relative accuracy is about 1e-4 or better for Gaussian-tailed integrands
    whose mass lies inside ``[-half_width, half_width]^dim``.
    """
    if points is None:
        points = 40001 if q1.dim == 1 else 801
    l1, l2, w = _grid(q1, q2, half_width, points)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        vals = gen.perspective(l1, l2)
    vals = np.where((l1 < -745) & (l2 < -745), 0.0, vals)
    return float(np.sum(w * vals))


def quadrature_variational_bound(gen, q1, q2, log_r_tilde, half_width=20.0, points=None) -> float:
    """Population version of ``G_f(r~)``, integrated against exact densities."""
    if points is None:
        points = 40001 if q1.dim == 1 else 801
    l1, l2, w = _grid(q1, q2, half_width, points)
    d = (l1 + q1.exact_log_z) - (l2 + q2.exact_log_z)
    ell = d - log_r_tilde
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        t1 = np.exp(l1) * gen.fprime_log(ell)
        t2 = np.exp(l2) * gen.conj_log(ell)
    t1 = np.where(l1 < -745, 0.0, t1)
    t2 = np.where(l2 < -745, 0.0, t2)
    return float(np.sum(w * t1) - np.sum(w * t2))
