"""Bridge estimators of ``log(Z1 / Z2)``.

Each public estimator takes the two log densities and the sample batches,
reduces them to log ratios ``d = log q~1 - log q~2`` on each batch, and calls
a ``*_from_log_ratios`` routine. Those routines are exposed as well, since
the trainer and the benchmark harness already hold the log ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .densities import SampleBatch, as_points
from .divergences import GeneratorFunction, harmonic_divergence_from_log_ratios, log_ratios, re2_from_log_gap
from .errors import ParameterError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500


@dataclass
class BridgeResult:
    """Estimate of ``log r`` with the iteration trace that produced it."""

    log_r_hat: float
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)
    re2_estimate: Optional[float] = None
    saturated: bool = False

    @property
    def r_hat(self) -> float:
        return math.exp(self.log_r_hat)


def _logmeanexp(x):
    return float(logsumexp(x) - math.log(len(x)))


def _sizes(d1, d2):
    n1, n2 = len(d1), len(d2)
    if n1 < 1 or n2 < 1:
        raise ParameterError("both sample batches must be non-empty")
    n = n1 + n2
    return n1, n2, n1 / n, n2 / n


# ---------------------------------------------------------------------------
# Closed-form estimators


def geometric_from_log_ratios(d1, d2) -> BridgeResult:
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    _sizes(d1, d2)
    val = _logmeanexp(0.5 * d2) - _logmeanexp(-0.5 * d1)
    return BridgeResult(val, 0, True, [val])


def geometric_bridge(log_q1, log_q2, s1, s2) -> BridgeResult:
    """Geometric bridge: ``mean_q2 sqrt(q~1/q~2) / mean_q1 sqrt(q~2/q~1)``."""
    return geometric_from_log_ratios(log_ratios(log_q1, log_q2, s1), log_ratios(log_q1, log_q2, s2))


def importance_sampling_bridge(direction: str, log_q1, log_q2, batch) -> BridgeResult:
    """Importance sampling with q2 as proposal, or its reciprocal with q1.

    ``direction="q2_proposal"``: ``r = mean_{x~q2} q~1/q~2``.
    ``direction="q1_proposal"``: ``r = 1 / mean_{x~q1} q~2/q~1``.
    """
    d = log_ratios(log_q1, log_q2, batch)
    if direction == "q2_proposal":
        val = _logmeanexp(d)
    elif direction == "q1_proposal":
        val = -_logmeanexp(-d)
    else:
        raise ParameterError(f"unknown importance sampling direction {direction!r}")
    return BridgeResult(val, 0, True, [val])


# ---------------------------------------------------------------------------
# Iterative optimal bridge


def _optimal_map(d1, d2, log_s1, log_s2, log_n1, log_n2, log_r):
    # numerator terms over q2 draws:   q1 / (s1 q1 + s2 q2 r)
    # denominator terms over q1 draws: q2 / (s1 q1 + s2 q2 r)
    num = -np.logaddexp(log_s1, log_s2 + log_r - d2)
    den = -np.logaddexp(log_s1 + d1, log_s2 + log_r)
    return float(logsumexp(num) - log_n2 - logsumexp(den) + log_n1)


def bridge_score(d1, d2, log_r) -> float:
    """Score equation of the optimal bridge divided by ``n``; zero at the fixed point."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    n1, n2, s1, s2 = _sizes(d1, d2)
    # s2 q2 r / (s1 q1 + s2 q2 r) = sigmoid(log s2 + log r - log s1 - d)
    z1 = math.log(s2) + log_r - math.log(s1) - d1
    z2 = math.log(s1) + d2 - math.log(s2) - log_r
    w1 = np.exp(-np.logaddexp(0.0, -z1))
    w2 = np.exp(-np.logaddexp(0.0, -z2))
    return float((np.sum(w2) - np.sum(w1)) / (n1 + n2))


def optimal_from_log_ratios(d1, d2, log_r0=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                            with_re2=False) -> BridgeResult:
    """Iterate the optimal-bridge fixed point in log space.

    ``log_r0`` defaults to the geometric bridge estimate. With ``with_re2``
    the harmonic-divergence RE^2 estimate on the same samples is attached.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    n1, n2, s1, s2 = _sizes(d1, d2)
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if log_r0 is None:
        log_r0 = geometric_from_log_ratios(d1, d2).log_r_hat
    args = (math.log(s1), math.log(s2), math.log(n1), math.log(n2))
    trace = [float(log_r0)]
    converged = False
    for _ in range(max_iter):
        nxt = _optimal_map(d1, d2, *args, trace[-1])
        trace.append(nxt)
        if abs(nxt - trace[-2]) < tol:
            converged = True
            break
    result = BridgeResult(trace[-1], len(trace) - 1, converged, trace)
    if with_re2:
        div = harmonic_divergence_from_log_ratios(s2, d1, d2)
        result.re2_estimate = re2_from_log_gap(div.log_gap, n1 + n2, s2)
        result.saturated = div.saturated
    return result


def optimal_bridge(log_q1, log_q2, s1, s2, log_r0=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                   with_re2=False) -> BridgeResult:
    """Asymptotically optimal bridge estimate of ``log(Z1/Z2)``.

    Iterates ``r <- [mean_q2 q1/(s1 q1 + s2 q2 r)] / [mean_q1 q2/(s1 q1 + s2 q2 r)]``
    until successive ``log r`` differ by less than ``tol``. Hitting
    ``max_iter`` returns the last iterate with ``converged=False``.
    """
    d1 = log_ratios(log_q1, log_q2, s1)
    d2 = log_ratios(log_q1, log_q2, s2)
    return optimal_from_log_ratios(d1, d2, log_r0, tol, max_iter, with_re2)


# ---------------------------------------------------------------------------
# General-f fixed point


def _general_map(gen, d1, d2, log_n1, log_n2, log_r):
    num = gen.log_fpp_log(d2 - log_r) + 2.0 * d2
    den = gen.log_fpp_log(d1 - log_r) + d1
    return float(logsumexp(num) - log_n2 - logsumexp(den) + log_n1)


def general_f_from_log_ratios(gen: GeneratorFunction, d1, d2, log_r0=None, tol=DEFAULT_TOL,
                              max_iter=DEFAULT_MAX_ITER) -> BridgeResult:
    """Fixed point of the stationarity condition of ``G_f`` in ``r~``.

    The map is ``r <- mean_q2[f''(u) q1^2/q2^2] / mean_q1[f''(u) q1/q2]`` with
    ``u = q1/(q2 r)``. After three consecutive sign flips of the step the
    iteration switches to half steps.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    n1, n2, _, _ = _sizes(d1, d2)
    if log_r0 is None:
        log_r0 = geometric_from_log_ratios(d1, d2).log_r_hat
    log_n1, log_n2 = math.log(n1), math.log(n2)
    trace = [float(log_r0)]
    converged = False
    damped = False
    flips = 0
    last_step = 0.0
    for _ in range(max_iter):
        cur = trace[-1]
        step = _general_map(gen, d1, d2, log_n1, log_n2, cur) - cur
        if not math.isfinite(step):
            break
        if last_step and step * last_step < 0:
            flips += 1
            if flips >= 3:
                damped = True
        else:
            flips = 0
        last_step = step
        nxt = cur + (0.5 * step if damped else step)
        trace.append(nxt)
        if abs(nxt - cur) < tol:
            converged = True
            break
    return BridgeResult(trace[-1], len(trace) - 1, converged, trace)


def general_f_bridge(gen: GeneratorFunction, log_q1, log_q2, s1, s2, log_r0=None, tol=DEFAULT_TOL,
                     max_iter=DEFAULT_MAX_ITER) -> BridgeResult:
    """Bridge estimate whose free function is induced by the generator ``gen``."""
    d1 = log_ratios(log_q1, log_q2, s1)
    d2 = log_ratios(log_q1, log_q2, s2)
    return general_f_from_log_ratios(gen, d1, d2, log_r0, tol, max_iter)


# ---------------------------------------------------------------------------


def split_samples(batch, fraction: float = 0.5, rng=None):
    """Random disjoint train/estimate partition.

    The training part has ``floor(n * fraction)`` rows (so n=3, fraction=1/3
    gives sizes 1 and 2). Returns two :class:`SampleBatch` objects.
    """
    if not 0.0 < fraction < 1.0:
        raise ParameterError("fraction must lie in (0, 1)")
    pts = as_points(batch)
    source = batch.source_id if isinstance(batch, SampleBatch) else "unknown"
    n = pts.shape[0]
    n_train = int(math.floor(n * fraction + 1e-9))
    if n_train < 1 or n_train >= n:
        raise ParameterError(f"cannot split {n} rows with fraction {fraction}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    return (SampleBatch(pts[perm[:n_train]], source), SampleBatch(pts[perm[n_train:]], source))
