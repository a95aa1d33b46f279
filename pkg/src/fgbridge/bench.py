"""Repeated-run benchmarks against targets with known normalizing constants.

Every repetition draws fresh samples from its own generator, spawned from
the experiment seed, so a summary is reproducible rep by rep regardless of
how many workers ran it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .bridge import geometric_from_log_ratios, optimal_from_log_ratios
from .densities import TargetDensity
from .errors import ParameterError
from .fgb import TrainConfig, bridge_on_transformed, fgb_estimate
from .flow import FlowModel

METHODS = ("fgb", "optimal_identity", "geometric", "is", "ris")


@dataclass
class ExperimentSpec:
    """Two targets with known ``log Z``, per-side sample sizes and a seed."""

    q1: TargetDensity
    q2: TargetDensity
    n1: int
    n2: int
    seed: int = 0
    train_config: TrainConfig = field(default_factory=TrainConfig)
    name: str = "experiment"

    def __post_init__(self):
        if self.q1.exact_log_z is None or self.q2.exact_log_z is None:
            raise ParameterError("benchmarks need exact_log_z on both targets")
        if self.q1.sampler is None or self.q2.sampler is None:
            raise ParameterError("benchmarks need samplers on both targets")
        if self.n1 < 2 or self.n2 < 2:
            raise ParameterError("need at least two draws per side")

    @property
    def true_log_r(self) -> float:
        return float(self.q1.exact_log_z - self.q2.exact_log_z)


@dataclass
class RepetitionSummary:
    """Monte Carlo summary over repetitions; standard errors are plug-in over reps.

    ``mean_re2_estimate`` averages the finite RE^2 estimates only; reps whose
    divergence estimate saturated are counted in ``saturated`` instead.
    """

    method: str
    log_r_hats: np.ndarray
    re2_estimates: np.ndarray
    true_log_r: float
    mc_mse_log_r: float
    mc_mse_se: float
    mean_re2_estimate: float
    mean_re2_se: float
    failures: int
    saturated: int = 0

    @classmethod
    def from_reps(cls, method, log_r_hats, re2_estimates, true_log_r, failures):
        log_r_hats = np.asarray(log_r_hats, dtype=float)
        re2 = np.asarray(re2_estimates, dtype=float)
        ok = np.isfinite(log_r_hats)
        sq = (log_r_hats[ok] - true_log_r) ** 2
        mse, mse_se = _mean_se(sq)
        finite = re2[np.isfinite(re2)]
        saturated = int(np.sum(np.isposinf(re2)))
        mre, mre_se = _mean_se(finite)
        return cls(method, log_r_hats, re2, float(true_log_r), mse, mse_se, mre, mre_se,
                   int(failures), saturated)

    def row(self):
        return {
            "method": self.method,
            "mc_mse": self.mc_mse_log_r,
            "mc_mse_se": self.mc_mse_se,
            "mean_re2": self.mean_re2_estimate,
            "mean_re2_se": self.mean_re2_se,
            "failures": self.failures,
            "saturated": self.saturated,
        }


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return math.nan, math.nan
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    return mean, se


def rep_generators(seed: int, reps: int) -> List[np.random.Generator]:
    """Independent per-rep generators spawned from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(reps)]


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs == 1 or len(items) < 2:
        return [fn(it) for it in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(it) for it in items)


def _one_rep(spec: ExperimentSpec, method: str, rng: np.random.Generator):
    """Returns ``(log_r_hat, re2_estimate, failed)`` for one repetition."""
    s1 = spec.q1.sample(rng, spec.n1)
    s2 = spec.q2.sample(rng, spec.n2)
    try:
        if method == "fgb":
            cfg = TrainConfig(**{**spec.train_config.__dict__, "seed": int(rng.integers(2**31 - 1))})
            result, _ = fgb_estimate(cfg, spec.q1, spec.q2, s1, s2)
            return result.log_r_hat, result.re2_estimate, not result.converged
        d1 = spec.q1.log_unnorm(s1.points) - spec.q2.log_unnorm(s1.points)
        d2 = spec.q1.log_unnorm(s2.points) - spec.q2.log_unnorm(s2.points)
        if method == "optimal_identity":
            result = optimal_from_log_ratios(d1, d2, with_re2=True)
            return result.log_r_hat, result.re2_estimate, not result.converged
        if method == "geometric":
            val = geometric_from_log_ratios(d1, d2).log_r_hat
        elif method == "is":
            val = float(np.logaddexp.reduce(d2) - math.log(d2.size))
        else:
            val = float(-(np.logaddexp.reduce(-d1) - math.log(d1.size)))
        return val, math.nan, not math.isfinite(val)
    except (ArithmeticError, ValueError, RuntimeError):
        return math.nan, math.nan, True


def run_repetitions(spec: ExperimentSpec, method: str, reps: int, n_jobs: Optional[int] = 1) -> RepetitionSummary:
    """Repeat ``method`` on fresh draws ``reps`` times and summarize against the truth.

    ``method`` is one of ``fgb``, ``optimal_identity`` (optimal bridge on the
    raw draws), ``geometric``, ``is`` (q2 proposal) or ``ris`` (q1 proposal).
    Failed reps are counted, never raised.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if reps < 1:
        raise ParameterError("reps must be positive")
    gens = rep_generators(spec.seed, reps)
    out = _map(lambda g: _one_rep(spec, method, g), gens, n_jobs)
    vals, re2s, failed = zip(*out)
    return RepetitionSummary.from_reps(method, vals, re2s, spec.true_log_r, sum(failed))


def fixed_flow_re2_study(model: FlowModel, base_q1: TargetDensity, q2: TargetDensity, n_prime: int,
                         reps: int, seed: int = 0, log_r0: Optional[float] = None,
                         n_jobs: Optional[int] = 1) -> RepetitionSummary:
    """Freeze a trained flow and repeat only the bridge step on fresh estimating draws.

    Each rep draws ``n_prime`` points from each target, pushes the q1 draws
    through the flow and records the optimal-bridge estimate with its RE^2
    estimate. The summary carries both the mean RE^2 estimate and the Monte
    Carlo MSE of ``log r_hat``.
    """
    if base_q1.exact_log_z is None or q2.exact_log_z is None:
        raise ParameterError("the study needs exact_log_z on both targets")
    if n_prime < 2 or reps < 1:
        raise ParameterError("need n_prime >= 2 and reps >= 1")
    truth = float(base_q1.exact_log_z - q2.exact_log_z)
    frozen = model.copy()

    def one(rng):
        e1 = base_q1.sample(rng, n_prime)
        e2 = q2.sample(rng, n_prime)
        try:
            result, _, _ = bridge_on_transformed(frozen, base_q1, q2, e1, e2, log_r0)
        except (ArithmeticError, ValueError, RuntimeError):
            return math.nan, math.nan, True
        return result.log_r_hat, result.re2_estimate, not result.converged

    out = _map(one, rep_generators(seed, reps), n_jobs)
    vals, re2s, failed = zip(*out)
    return RepetitionSummary.from_reps("fgb_fixed_flow", vals, re2s, truth, sum(failed))
