import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

import fgbridge.fgb as fgb_module
from fgbridge import (
    TargetDensity,
    TrainConfig,
    TrainReport,
    augment_with_standard_normal,
    build_flow,
    fgb_estimate,
    gaussian_target,
    hybrid_objective,
    make_generator,
    ring_benchmark_pair,
    train,
)
from fgbridge.divergences import harmonic_divergence_from_log_ratios
from fgbridge.errors import ParameterError, TrainingDivergedError
from fgbridge.fgb import HybridObjective, bridge_on_transformed
from fgbridge.grad import OptimizerState, adam_step
from fgbridge.optimize import maximize_scalar

SMALL = TrainConfig(layer_count=2, hidden_sizes=(8, 8), minibatch=None, max_epochs=30)


def gauss2(mean, var):
    return gaussian_target([mean, 0.0], [var, 1.0])


def perturbed_objective(seed, beta1, beta2, n=200):
    q1, q2 = ring_benchmark_pair(4)
    model = build_flow(4, 2, (8, 8), rng=seed)
    rng = np.random.default_rng(seed)
    theta = model.theta + rng.normal(0, 0.1, model.theta.size)
    obj = HybridObjective(model, q1, q2, q1.sample(rng, n).points, q2.sample(rng, n).points, beta1, beta2, 0.5)
    return obj, theta


# -- objective ------------------------------------------------------------


def test_identical_targets_identity_flow_gives_zero():
    q = gauss2(0.0, 1.0)
    model = build_flow(2, 2, (4,), rng=0)
    pts = q.sample(np.random.default_rng(0), 50)
    assert hybrid_objective(model.theta, 0.0, model, q, q, pts, pts, 0.0, 0.0, 0.5) == pytest.approx(0.0, abs=1e-15)


def test_objective_validates_inputs():
    q = gauss2(0.0, 1.0)
    model = build_flow(2, 2, (4,), rng=0)
    pts = np.zeros((3, 2))
    with pytest.raises(ParameterError):
        HybridObjective(model, q, q, pts, pts, 0.05, 0.05, 1.0)
    with pytest.raises(ParameterError):
        HybridObjective(model, gaussian_target([0.0] * 3, [1.0] * 3), q, pts, pts, 0.05, 0.05, 0.5)


@pytest.mark.parametrize("beta1,beta2", [(0.0, 0.0), (0.05, 0.05), (1.0, 0.0), (0.0, 3.0)])
def test_log_r_argmax_ignores_likelihood_terms(beta1, beta2):
    obj, theta = perturbed_objective(7, beta1, beta2)
    d1, d2 = obj.log_ratios(theta)
    ref = harmonic_divergence_from_log_ratios(obj.pi, d1, d2, xtol=1e-10).maximizer_log_r
    lo, hi = ref - 10, ref + 10
    best, _, _ = maximize_scalar(np.vectorize(lambda lr: obj.value(theta, lr)), lo, hi, xtol=1e-10)
    # the hybrid objective is maximized over log r~, same as G
    assert best == pytest.approx(ref, abs=1e-6)


def test_identity_flow_matches_harmonic_quadrature():
    # both Gaussians carry the same appended N(0,1) coordinate, which leaves H unchanged
    q1, q2 = gauss2(0.0, 1.0), gauss2(0.0, 2.0)
    rng = np.random.default_rng(3)
    n = 100_000
    x1, x2 = q1.sample(rng, n).points, q2.sample(rng, n).points
    model = build_flow(2, 2, (4,), rng=0)
    obj = HybridObjective(model, q1, q2, x1, x2, 0.0, 0.0, 0.5)
    d1, d2 = obj.log_ratios(model.theta)
    best = harmonic_divergence_from_log_ratios(0.5, d1, d2).maximizer_log_r
    gap = math.exp(-obj.value(model.theta, best))

    def integrand(x):
        a = math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
        b = math.exp(-x * x / 4) / math.sqrt(4 * math.pi)
        return a * b / (0.5 * a + 0.5 * b)

    truth, _ = integrate.quad(integrand, -40, 40)
    g = make_generator("harmonic", 0.5)
    se = math.sqrt(np.var(g.fprime_log(d1 - best)) / n + np.var(g.conj_log(d2 - best)) / n)
    assert abs(gap - truth) < 3 * se


def test_log_transform_rescales_raw_gradient():
    """With beta = 0 an Adam step on L equals one on -G with gradient scaled by 1/(1-G)."""
    obj, theta = perturbed_objective(11, 0.0, 0.0)
    log_r = -0.4
    value, grad_l, _ = obj.value_and_grad(theta, log_r)
    one_minus_g = math.exp(-value)

    # raw gradient of G from the generator's f'' (independent of the log-sum-exp path)
    gen = make_generator("harmonic", obj.pi)
    t = obj._terms()
    u1, u2 = np.exp(t["d1"] - log_r), np.exp(t["d2"] - log_r)
    g_ell1 = gen.f_double_prime(u1) * u1 / u1.size
    g_ell2 = -gen.f_double_prime(u2) * u2 * u2 / u2.size
    g_y1 = -g_ell1[:, None] * obj.q2.score(t["y1"])
    _, grad1 = obj.model.forward_vjp(t["c1"], g_y1, -g_ell1)
    g_z2 = g_ell2[:, None] * obj.q1.score(t["z2"])
    _, grad2 = obj.model.inverse_vjp(t["c2"], g_z2, g_ell2)
    grad_g = grad1 + grad2

    state = OptimizerState.fresh(theta.size, 1e-3)
    step_l = adam_step(state, grad_l, theta)[0]
    step_g = adam_step(state, grad_g / one_minus_g, theta)[0]
    assert np.max(np.abs(step_l - step_g)) < 1e-10
    assert np.allclose(grad_l, grad_g / one_minus_g, rtol=1e-8, atol=1e-12)


# -- training loop --------------------------------------------------------


def test_report_traces_and_round_trip(tmp_path):
    q1, q2 = gauss2(0.0, 1.0), gauss2(0.3, 1.5)
    rng = np.random.default_rng(0)
    model = build_flow(2, 2, (8, 8), rng=1)
    report = train(replace(SMALL, max_epochs=7, eps1=1e-12, eps2=1e-12), q1, q2,
                   q1.sample(rng, 200), q2.sample(rng, 200), model)
    assert report.epochs_run == 7 and report.stopped_by == "max_epochs"
    assert len(report.objective_trace) == len(report.r_trace) == report.epochs_run + 1
    assert np.all(np.isfinite(report.objective_trace))
    assert np.array_equal(model.theta, report.final_theta)
    report.save(tmp_path / "r.json")
    back = TrainReport.load(tmp_path / "r.json")
    assert np.array_equal(back.final_theta, report.final_theta)
    assert back.objective_trace == report.objective_trace and back.stopped_by == report.stopped_by


def test_training_is_deterministic():
    q1, q2 = ring_benchmark_pair(2)
    rng = np.random.default_rng(5)
    s1, s2 = q1.sample(rng, 300), q2.sample(rng, 300)
    cfg = replace(SMALL, minibatch=50, max_epochs=5, seed=9)
    a = train(cfg, q1, q2, s1, s2, build_flow(2, 2, (8, 8), rng=2))
    b = train(cfg, q1, q2, s1, s2, build_flow(2, 2, (8, 8), rng=2))
    assert np.array_equal(a.final_theta, b.final_theta) and a.r_trace == b.r_trace


def test_training_reduces_objective_on_rings():
    q1, q2 = ring_benchmark_pair(2)
    rng = np.random.default_rng(6)
    cfg = replace(SMALL, minibatch=100, max_epochs=20, eps1=1e-9, eps2=1e-9, hidden_sizes=(16, 16))
    report = train(cfg, q1, q2, q1.sample(rng, 500), q2.sample(rng, 500), build_flow(2, 2, (16, 16), rng=3))
    assert report.objective_trace[-1] < report.objective_trace[0] - 1.0


def test_identical_targets_stop_quickly():
    q = gauss2(0.0, 1.0)
    rng = np.random.default_rng(7)
    cfg = TrainConfig(layer_count=2, hidden_sizes=(8, 8), max_epochs=50)
    report = train(cfg, q, q, q.sample(rng, 5000), q.sample(rng, 5000), build_flow(2, 2, (8, 8), rng=4))
    assert report.stopped_by == "objective_and_r_stable" and report.epochs_run <= 10
    assert abs(report.objective_trace[-1]) < 0.05
    assert abs(report.final_log_r_tilde) < 0.05


def test_divergence_error_after_three_bad_epochs():
    base = gauss2(0.0, 1.0)
    calls = {"n": 0}

    def flaky(x):
        calls["n"] += 1
        out = base.log_unnorm(x)
        return out if calls["n"] <= 3 else np.full_like(out, np.nan)

    q2 = TargetDensity(2, flaky, base.exact_log_z, base.sampler, base.score, "flaky")
    rng = np.random.default_rng(8)
    model = build_flow(2, 2, (4,), rng=0)
    with pytest.raises(TrainingDivergedError) as info:
        train(SMALL, base, q2, base.sample(rng, 40), base.sample(rng, 40), model)
    assert info.value.epoch == 3
    assert np.array_equal(info.value.last_theta, model.theta)


def test_callback_can_stop_training():
    q1, q2 = gauss2(0.0, 1.0), gauss2(0.5, 1.0)
    rng = np.random.default_rng(9)
    seen = []
    report = train(replace(SMALL, eps1=1e-12, eps2=1e-12), q1, q2, q1.sample(rng, 100), q2.sample(rng, 100),
                   build_flow(2, 2, (4,), rng=0), callback=lambda e, th, lr, v: seen.append(e) or e == 4)
    assert seen == [1, 2, 3, 4] and report.stopped_by == "callback" and report.epochs_run == 4


def test_train_requires_scores():
    q = gauss2(0.0, 1.0)
    no_score = TargetDensity(2, q.log_unnorm, q.exact_log_z, q.sampler, None, "no score")
    with pytest.raises(ParameterError):
        train(SMALL, q, no_score, np.zeros((4, 2)), np.zeros((4, 2)), build_flow(2, 2, (4,)))


def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(eps1=0.0)
    with pytest.raises(ParameterError):
        TrainConfig(update_order="random")
    with pytest.raises(ParameterError):
        TrainConfig(beta1=-1.0)


def test_alternating_update_order_runs():
    q1, q2 = gauss2(0.0, 1.0), gauss2(0.5, 1.0)
    rng = np.random.default_rng(10)
    report = train(replace(SMALL, update_order="alternating", max_epochs=3, r_sync=False), q1, q2,
                   q1.sample(rng, 100), q2.sample(rng, 100), build_flow(2, 2, (4,), rng=0))
    assert np.all(np.isfinite(report.objective_trace))


def test_rescue_moves_stranded_log_r():
    q1, q2 = gauss2(0.0, 1.0), gauss2(0.5, 1.5)
    rng = np.random.default_rng(12)
    x1, x2 = q1.sample(rng, 200), q2.sample(rng, 200)
    cfg = replace(SMALL, max_epochs=5, min_epochs=5)
    # far outside every log ratio the ascent gradient underflows and log r~ cannot move
    stuck = train(cfg, q1, q2, x1, x2, build_flow(2, 2, (4,), rng=0), log_r0=2000.0)
    assert stuck.r_rescues == 0 and stuck.final_log_r_tilde == 2000.0
    rescued = train(replace(cfg, r_rescue=True), q1, q2, x1, x2, build_flow(2, 2, (4,), rng=0), log_r0=2000.0)
    assert rescued.r_rescues == 1 and abs(rescued.final_log_r_tilde) < 5.0


# -- end to end -----------------------------------------------------------


def test_gaussian_pair_recovers_log_ratio():
    q1 = augment_with_standard_normal(gaussian_target([0.0], [1.0]), 1)
    q2 = augment_with_standard_normal(gaussian_target([0.0], [2.0]), 1)
    rng = np.random.default_rng(11)
    result, report = fgb_estimate(SMALL, q1, q2, q1.sample(rng, 10_000), q2.sample(rng, 10_000))
    assert result.converged and not result.saturated
    assert abs(result.log_r_hat + 0.5 * math.log(2.0)) < 3 * math.sqrt(result.re2_estimate)


def test_augmented_unequal_dimensions():
    q1 = augment_with_standard_normal(gaussian_target([1.0], [0.5]), 1)
    q2 = gaussian_target([0.0, 0.5], [1.5, 0.8])
    truth = q1.exact_log_z - q2.exact_log_z
    rng = np.random.default_rng(12)
    result, _ = fgb_estimate(SMALL, q1, q2, q1.sample(rng, 4000), q2.sample(rng, 4000))
    assert abs(result.log_r_hat - truth) < 3 * math.sqrt(result.re2_estimate)


def test_training_and_estimating_draws_never_mix(monkeypatch):
    """Instrument both densities and check which draws each phase evaluates."""
    base1, base2 = ring_benchmark_pair(2)
    log = []
    phase = {"now": "setup"}

    def logged(target):
        def fn(x):
            log.append((phase["now"], np.atleast_2d(np.array(x, dtype=float))))
            return target.log_unnorm(x)
        return TargetDensity(2, fn, target.exact_log_z, target.sampler, target.score, target.name)

    q1, q2 = logged(base1), logged(base2)
    real_train = fgb_module.train

    def phased_train(*args, **kwargs):
        phase["now"] = "train"
        try:
            return real_train(*args, **kwargs)
        finally:
            phase["now"] = "estimate"

    monkeypatch.setattr(fgb_module, "train", phased_train)
    rng = np.random.default_rng(13)
    all1, all2 = base1.sample(rng, 400), base2.sample(rng, 400)
    cfg = replace(SMALL, max_epochs=3)
    result, _, det = fgb_estimate(cfg, q1, q2, all1, all2, return_details=True)

    def rows(a):
        return {tuple(r) for r in np.round(a, 12)}

    train_rows = rows(np.vstack([det.train1.points, det.train2.points]))
    est_rows = rows(np.vstack([det.est1.points, det.est2.points]))
    assert not train_rows & est_rows
    seen_train = set().union(*(rows(pts) for ph, pts in log if ph == "train"))
    seen_est = set().union(*(rows(pts) for ph, pts in log if ph == "estimate"))
    assert seen_train and seen_est
    assert not seen_train & est_rows
    assert not seen_est & train_rows
    # the headline numbers are reproducible from the estimating half alone
    again, _, _ = bridge_on_transformed(det.model, base1, base2, det.est1, det.est2,
                                        log_r0=result.trace[0])
    assert again.log_r_hat == result.log_r_hat and again.re2_estimate == result.re2_estimate


@pytest.mark.slow
def test_demo_rings_traces_stabilize():
    q1, q2 = ring_benchmark_pair(12, "demo")
    rng = np.random.default_rng(14)
    cfg = TrainConfig(max_epochs=25, eps1=1e-12, eps2=1e-12, seed=3)
    report = train(cfg, q1, q2, q1.sample(rng, 1000), q2.sample(rng, 1000), build_flow(12, rng=3))
    assert np.all(np.isfinite(report.objective_trace))
    tail = np.array(report.r_trace[20:])
    assert np.ptp(tail) < 0.1


@pytest.mark.slow
def test_trained_flow_beats_identity_by_tenfold_p12():
    q1, q2 = ring_benchmark_pair(12)
    rng = np.random.default_rng(15)
    all1, all2 = q1.sample(rng, 2000), q2.sample(rng, 2000)
    result, _, det = fgb_estimate(TrainConfig(seed=15), q1, q2, all1, all2, return_details=True)
    identity = build_flow(12, rng=0)
    base, _, _ = bridge_on_transformed(identity, q1, q2, det.est1, det.est2)
    assert base.re2_estimate >= 10 * result.re2_estimate
