"""f-GAN bridge: train a flow on q1 against q2, then bridge on held-out draws.

The training objective is::

    L(theta, r~) = -log(1 - G_pi(r~, theta))
                   - beta1 * mean_{x~q1}[log q~2(T x) - log q~1^T(T x)]
                   - beta2 * mean_{y~q2}[log q~1^T(y)]

minimized over the flow parameters and maximized over ``log r~``, where
``q~1^T`` is the pushed-forward unnormalized density of q1 and
``G_pi`` is the harmonic variational bound with ``pi = n2 / (n1 + n2)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .bridge import BridgeResult, optimal_from_log_ratios, split_samples
from .densities import SampleBatch, TargetDensity, as_points
from .divergences import harmonic_divergence_from_log_ratios, re2_from_log_gap
from .errors import DensityEvaluationError, FlowNumericError, ParameterError, TrainingDivergedError
from .flow import FlowModel, build_flow
from .grad import GradientRecord, OptimizerState, adam_step, objective_with_gradients


@dataclass
class TrainConfig:
    """Hyperparameters of the alternating training loop.

    ``eps1`` bounds the epoch-to-epoch change of the objective and ``eps2``
    that of ``log r~``; training stops once both hold. ``minibatch=None``
    means one full-batch step per epoch. ``update_order`` is
    ``"simultaneous"`` (both gradients at the same iterate) or
    ``"alternating"`` (the ``log r~`` gradient after the flow update).
    ``r_sync`` replaces ``log r~`` by the exact maximizer of the harmonic
    bound on the training draws at the end of every epoch.
    ``r_rescue`` does the same only when the ascent player has stalled, that
    is when ``log r~`` lies outside the range of the training log ratios.
    ``weight_decay`` applies decoupled decay to weight matrices only.
    """

    beta1: float = 0.05
    beta2: float = 0.05
    eta_phi: float = 1e-3
    eta_r: float = 1e-2
    r_betas: tuple = (0.9, 0.999)
    phi_betas: tuple = (0.9, 0.999)
    r_sync: bool = False
    r_rescue: bool = False
    weight_decay: float = 0.0
    eps1: float = 5e-3
    eps2: float = 5e-3
    max_epochs: int = 300
    min_epochs: int = 1
    minibatch: Optional[int] = 100
    seed: int = 0
    grad_clip: float = 100.0
    update_order: str = "simultaneous"
    layer_count: int = 4
    hidden_sizes: tuple = (64, 64)
    mask_kind: str = "interleave"
    split_fraction: float = 0.5
    restarts: int = 1

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ParameterError("eps1 and eps2 must be positive")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ParameterError("beta1 and beta2 must be non-negative")
        if self.update_order not in ("simultaneous", "alternating"):
            raise ParameterError(f"unknown update_order {self.update_order!r}")
        if self.minibatch is not None and self.minibatch < 1:
            raise ParameterError("minibatch must be positive or None")
        if self.restarts < 1:
            raise ParameterError("restarts must be at least 1")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


@dataclass
class TrainReport:
    final_theta: np.ndarray
    final_log_r_tilde: float
    objective_trace: List[float]
    r_trace: List[float]
    epochs_run: int
    stopped_by: str
    pi: float = 0.5
    r_rescues: int = 0

    def to_dict(self):
        return {
            "final_theta": self.final_theta.tolist(),
            "final_log_r_tilde": self.final_log_r_tilde,
            "objective_trace": list(self.objective_trace),
            "r_trace": list(self.r_trace),
            "epochs_run": self.epochs_run,
            "stopped_by": self.stopped_by,
            "pi": self.pi,
            "r_rescues": self.r_rescues,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        raw["final_theta"] = np.asarray(raw["final_theta"], dtype=float)
        return cls(**raw)


def _checked(values, what):
    values = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise DensityEvaluationError(f"non-finite {what} at sample index {bad[0]}", int(bad[0]))
    return values


class HybridObjective:
    """Evaluates the hybrid objective and its exact gradients for fixed batches.

    The batches are held as arrays together with the base log densities at
    the q1 draws, which do not depend on the flow.
    """

    def __init__(self, model: FlowModel, base_q1: TargetDensity, q2: TargetDensity,
                 x1, x2, beta1: float, beta2: float, pi: float):
        if base_q1.dim != model.dim or q2.dim != model.dim:
            raise ParameterError("flow, q1 and q2 must share a dimension")
        if not 0.0 < pi < 1.0:
            raise ParameterError("pi must lie in (0, 1)")
        self.model = model
        self.q1 = base_q1
        self.q2 = q2
        self.x1 = np.asarray(x1, dtype=float)
        self.x2 = np.asarray(x2, dtype=float)
        if len(self.x1) < 1 or len(self.x2) < 1:
            raise ParameterError("both sample batches must be non-empty")
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.pi = float(pi)
        self.lq1_x1 = _checked(base_q1.log_unnorm(self.x1), "log q1")
        self.lq2_x2 = _checked(q2.log_unnorm(self.x2), "log q2")

    def _terms(self, idx1=None, idx2=None):
        x1 = self.x1 if idx1 is None else self.x1[idx1]
        x2 = self.x2 if idx2 is None else self.x2[idx2]
        lq1_x1 = self.lq1_x1 if idx1 is None else self.lq1_x1[idx1]
        lq2_x2 = self.lq2_x2 if idx2 is None else self.lq2_x2[idx2]
        y1, ld1, c1 = self.model.forward_cached(x1)
        z2, ldi2, c2 = self.model.inverse_cached(x2)
        lq2_y1 = _checked(self.q2.log_unnorm(y1), "log q2 at transformed q1 draws")
        lq1_z2 = _checked(self.q1.log_unnorm(z2), "log q1 at pulled-back q2 draws")
        lq1t_y1 = lq1_x1 - ld1
        lq1t_x2 = lq1_z2 + ldi2
        d1 = lq1t_y1 - lq2_y1
        d2 = lq1t_x2 - lq2_x2
        return dict(x1=x1, x2=x2, y1=y1, z2=z2, c1=c1, c2=c2, d1=d1, d2=d2, lq1t_x2=lq1t_x2)

    def _value(self, t, log_r):
        n1, n2 = t["d1"].size, t["d2"].size
        lp, lq = math.log(self.pi), math.log1p(-self.pi)
        ell1 = t["d1"] - log_r
        ell2 = t["d2"] - log_r
        a1 = np.logaddexp(lp, lq + ell1)
        a2 = np.logaddexp(lp, lq + ell2)
        terms = np.concatenate([
            lp - 2.0 * a1 - math.log(n1),
            lq + 2.0 * (ell2 - a2) - math.log(n2),
        ])
        log_gap = float(logsumexp(terms))
        value = -log_gap + self.beta1 * float(np.mean(t["d1"])) - self.beta2 * float(np.mean(t["lq1t_x2"]))
        return value, log_gap, terms, ell1, ell2, a1, a2

    def log_ratios(self, theta=None):
        """Log ratios ``log q~1^T - log q~2`` at ``T(x1)`` and at ``x2``."""
        if theta is not None:
            self.model.set_theta(theta)
        t = self._terms()
        return t["d1"], t["d2"]

    def value(self, theta, log_r, idx1=None, idx2=None) -> float:
        self.model.set_theta(theta)
        return self._value(self._terms(idx1, idx2), log_r)[0]

    def value_and_grad(self, theta, log_r, idx1=None, idx2=None):
        self.model.set_theta(theta)
        t = self._terms(idx1, idx2)
        n1, n2 = t["d1"].size, t["d2"].size
        value, _, terms, ell1, ell2, a1, a2 = self._value(t, log_r)
        lq = math.log1p(-self.pi)
        w = np.exp(terms - logsumexp(terms))
        w1, w2 = w[:n1], w[n1:]
        sig1 = np.exp(lq + ell1 - a1)
        sig2 = np.exp(lq + ell2 - a2)
        # d value / d ell for the -log(1-G) part, then add the likelihood terms
        g_ell1 = 2.0 * w1 * sig1
        g_ell2 = -2.0 * w2 * (1.0 - sig2)
        g_log_r = -(float(np.sum(g_ell1)) + float(np.sum(g_ell2)))
        g_d1 = g_ell1 + self.beta1 / n1
        g_lq1t_x2 = g_ell2 - self.beta2 / n2
        # d1 = lq1(x1) - logdet_fwd(x1) - lq2(T x1)
        g_y1 = -g_d1[:, None] * self.q2.score(t["y1"])
        _, grad1 = self.model.forward_vjp(t["c1"], g_y1, -g_d1)
        # lq1t_x2 = lq1(T^-1 x2) + logdet_inv(x2)
        g_z2 = g_lq1t_x2[:, None] * self.q1.score(t["z2"])
        _, grad2 = self.model.inverse_vjp(t["c2"], g_z2, g_lq1t_x2)
        return value, grad1 + grad2, g_log_r


def hybrid_objective(theta, log_r_tilde, model, base_q1, q2, s1, s2, beta1, beta2, pi) -> float:
    """Value of the hybrid stabilized objective at ``(theta, log r~)``."""
    obj = HybridObjective(model, base_q1, q2, as_points(s1), as_points(s2), beta1, beta2, pi)
    return obj.value(np.asarray(theta, dtype=float), float(log_r_tilde))


def hybrid_objective_with_gradients(theta, log_r_tilde, model, base_q1, q2, s1, s2, beta1, beta2,
                                    pi) -> GradientRecord:
    obj = HybridObjective(model, base_q1, q2, as_points(s1), as_points(s2), beta1, beta2, pi)
    return objective_with_gradients(obj.value_and_grad, theta, log_r_tilde, model.param_blocks())


# ---------------------------------------------------------------------------
# Training loop


def _clip(g, limit):
    norm = float(np.linalg.norm(g))
    if limit and norm > limit:
        return g * (limit / norm)
    return g


def _initial_log_r(obj: HybridObjective, theta):
    d1, d2 = obj.log_ratios(theta)
    return harmonic_divergence_from_log_ratios(obj.pi, d1, d2).maximizer_log_r


def _r_stalled(obj: HybridObjective, theta, log_r) -> bool:
    # beyond every log ratio the bound is flat in log r~ and its gradient underflows
    d1, d2 = obj.log_ratios(theta)
    return not (min(d1.min(), d2.min()) <= log_r <= max(d1.max(), d2.max()))


def train(config: TrainConfig, base_q1: TargetDensity, q2: TargetDensity, train1, train2,
          model: FlowModel, log_r0: Optional[float] = None, callback=None) -> TrainReport:
    """Alternating min-max training of the flow and ``log r~``.

    The flow takes adaptive-moment descent steps on the objective and
    ``log r~`` takes ascent steps. An epoch is one pass over the training
    draws in minibatches; after each epoch the full-batch objective is
    recorded and training stops once both the objective and ``log r~``
    moved by at most ``eps1``/``eps2`` since the previous epoch.

    ``callback(epoch, theta, log_r, objective)``, if given, runs after every
    epoch; returning ``True`` from it stops training.

    The returned ``final_log_r_tilde`` is fitted on the training draws and
    is only a starting value for the held-out bridge step.
    """
    x1, x2 = as_points(train1), as_points(train2)
    if not (model.dim == base_q1.dim == q2.dim):
        raise ParameterError("model, q1 and q2 must share a dimension")
    if base_q1.score is None or q2.score is None:
        raise ParameterError("training needs score functions on both targets")
    n1, n2 = len(x1), len(x2)
    pi = n2 / (n1 + n2)
    obj = HybridObjective(model, base_q1, q2, x1, x2, config.beta1, config.beta2, pi)
    rng = np.random.default_rng(config.seed)
    theta = model.theta.copy()
    log_r = _initial_log_r(obj, theta) if log_r0 is None else float(log_r0)

    opt_phi = OptimizerState.fresh(theta.size, config.eta_phi, *config.phi_betas)
    opt_r = OptimizerState.fresh(1, config.eta_r, *config.r_betas)
    obj_trace = [obj.value(theta, log_r)]
    r_trace = [log_r]
    blocks = model.param_blocks()
    decay_mask = np.zeros(theta.size, dtype=bool)
    for name, sl in blocks:
        if name.endswith("weight"):
            decay_mask[sl] = True
    bad_epochs = 0
    rescues = 0
    last_good = (theta.copy(), log_r)
    stopped_by = "max_epochs"
    epoch = 0

    batch = config.minibatch
    n_steps = 1 if batch is None else max(1, math.ceil(max(n1, n2) / batch))

    for epoch in range(1, config.max_epochs + 1):
        perm1 = rng.permutation(n1)
        perm2 = rng.permutation(n2)
        for step in range(n_steps):
            if batch is None:
                idx1 = idx2 = None
            else:
                idx1 = perm1[(step * batch) % n1:][:batch]
                idx2 = perm2[(step * batch) % n2:][:batch]
            try:
                rec = objective_with_gradients(
                    lambda th, lr: obj.value_and_grad(th, lr, idx1, idx2), theta, log_r, blocks)
            except (ArithmeticError, FloatingPointError):
                break
            new_theta, opt_phi = adam_step(opt_phi, _clip(rec.d_theta, config.grad_clip), theta)
            if config.weight_decay:
                # decoupled decay on weight matrices only
                new_theta[decay_mask] -= config.eta_phi * config.weight_decay * theta[decay_mask]
            if config.update_order == "alternating":
                rec_r = obj.value_and_grad(new_theta, log_r, idx1, idx2)[2]
                g_r = rec_r
            else:
                g_r = rec.d_log_r
            # ascent in log r~: descend on the negated gradient
            new_r, opt_r = adam_step(opt_r, np.array([-g_r]), np.array([log_r]))
            theta, log_r = new_theta, float(new_r[0])

        try:
            if config.r_sync:
                log_r = _initial_log_r(obj, theta)
            elif config.r_rescue and _r_stalled(obj, theta, log_r):
                log_r = _initial_log_r(obj, theta)
                opt_r = OptimizerState.fresh(1, config.eta_r, *config.r_betas)
                rescues += 1
            current = obj.value(theta, log_r)
        except (ArithmeticError, FloatingPointError, DensityEvaluationError, FlowNumericError):
            current = math.nan
        obj_trace.append(current)
        r_trace.append(log_r)
        if not math.isfinite(current):
            bad_epochs += 1
            if bad_epochs >= 3:
                model.set_theta(last_good[0])
                raise TrainingDivergedError(
                    f"objective non-finite for 3 consecutive epochs (epoch {epoch})",
                    last_good[0], last_good[1], epoch)
            continue
        bad_epochs = 0
        last_good = (theta.copy(), log_r)
        if callback is not None and callback(epoch, theta, log_r, current):
            stopped_by = "callback"
            break
        if (epoch >= config.min_epochs and math.isfinite(obj_trace[-2])
                and abs(obj_trace[-1] - obj_trace[-2]) <= config.eps1
                and abs(r_trace[-1] - r_trace[-2]) <= config.eps2):
            stopped_by = "objective_and_r_stable"
            break

    model.set_theta(theta)
    return TrainReport(theta.copy(), log_r, obj_trace, r_trace, epoch, stopped_by, pi, rescues)


# ---------------------------------------------------------------------------
# End to end


@dataclass
class EstimateDetails:
    """Held-out quantities from :func:`fgb_estimate`, kept for plotting and audits."""

    model: FlowModel
    train1: SampleBatch
    train2: SampleBatch
    est1: SampleBatch
    est2: SampleBatch
    transformed_est1: np.ndarray
    divergence_value: float
    pi_estimate: float


def bridge_on_transformed(model: FlowModel, base_q1: TargetDensity, q2: TargetDensity, est1, est2,
                          log_r0=None, tol=1e-8, max_iter=500):
    """Optimal bridge and RE^2 on held-out draws after pushing q1's draws through the flow.

    Returns ``(BridgeResult, DivergenceEstimate, transformed q1 draws)``.
    """
    x1, x2 = as_points(est1), as_points(est2)
    y1, ld1, _ = model.forward_cached(x1)
    z2, ldi2, _ = model.inverse_cached(x2)
    d1 = _checked(base_q1.log_unnorm(x1) - ld1 - q2.log_unnorm(y1), "log ratio")
    d2 = _checked(base_q1.log_unnorm(z2) + ldi2 - q2.log_unnorm(x2), "log ratio")
    n1, n2 = d1.size, d2.size
    s2 = n2 / (n1 + n2)
    result = optimal_from_log_ratios(d1, d2, log_r0, tol, max_iter)
    div = harmonic_divergence_from_log_ratios(s2, d1, d2)
    result.re2_estimate = re2_from_log_gap(div.log_gap, n1 + n2, s2)
    result.saturated = div.saturated
    return result, div, y1


def fgb_estimate(config: TrainConfig, base_q1: TargetDensity, q2: TargetDensity, all_samples_1,
                 all_samples_2, model: Optional[FlowModel] = None, return_details: bool = False):
    """Split, train the flow on one half, bridge on the other half.

    Returns ``(BridgeResult, TrainReport)``, plus an :class:`EstimateDetails`
    when ``return_details`` is set. With ``config.restarts > 1`` the run with
    the smallest final training objective is kept.
    """
    rng = np.random.default_rng(config.seed)
    train1, est1 = split_samples(all_samples_1, config.split_fraction, rng)
    train2, est2 = split_samples(all_samples_2, config.split_fraction, rng)
    best = None
    for attempt in range(config.restarts):
        seed = int(rng.integers(2**63 - 1))
        if model is not None and attempt == 0:
            candidate = model
        else:
            candidate = build_flow(base_q1.dim, config.layer_count, config.hidden_sizes,
                                   seed, config.mask_kind)
        run_cfg = TrainConfig(**{**asdict(config), "seed": seed})
        report = train(run_cfg, base_q1, q2, train1, train2, candidate)
        if best is None or report.objective_trace[-1] < best[1].objective_trace[-1]:
            best = (candidate, report)
    model, report = best
    model.set_theta(report.final_theta)
    result, div, y1 = bridge_on_transformed(model, base_q1, q2, est1, est2, log_r0=report.final_log_r_tilde)
    if return_details:
        details = EstimateDetails(model, train1, train2, est1, est2, y1, div.value, len(est2) / (len(est1) + len(est2)))
        return result, report, details
    return result, report
