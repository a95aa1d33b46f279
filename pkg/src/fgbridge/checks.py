"""Fast self-checks behind ``fgbridge check``; each group returns pass/fail and a detail."""

from __future__ import annotations

import numpy as np

from .bridge import general_f_from_log_ratios, geometric_from_log_ratios, optimal_from_log_ratios
from .densities import gaussian_target, ring_benchmark_pair
from .divergences import make_generator
from .errors import ModelFormatError
from .fgb import HybridObjective
from .flow import build_flow, load_flow
from .grad import finite_difference_check

U_GRID = np.logspace(-4, 4, 100)


def check_generators():
    worst = 0.0
    for kind, pi in (("harmonic", 0.3), ("kl", None), ("reverse_kl", None), ("js", 0.4), ("sq_hellinger", None)):
        g = make_generator(kind, pi)
        worst = max(worst, abs(g.f(1.0)))
        conj = g.conjugate_of_fprime(U_GRID)
        ref = U_GRID * g.f_prime(U_GRID) - g.f(U_GRID)
        worst = max(worst, float(np.max(np.abs(conj - ref) / np.maximum(1.0, np.abs(ref)))))
        if np.any(g.f_double_prime(U_GRID) <= 0):
            return False, f"{kind} is not strictly convex on the grid"
    return worst < 1e-10, f"max identity error {worst:.1e}"


def check_estimator_identities():
    rng = np.random.default_rng(7)
    d1 = rng.normal(0.3, 1.0, 400)
    d2 = rng.normal(-0.2, 1.1, 600)
    geo = geometric_from_log_ratios(d1, d2).log_r_hat
    hel = general_f_from_log_ratios(make_generator("sq_hellinger"), d1, d2).log_r_hat
    opt = optimal_from_log_ratios(d1, d2).log_r_hat
    js = general_f_from_log_ratios(make_generator("js", 0.4), d1, d2).log_r_hat
    err = max(abs(geo - hel), abs(opt - js))
    return err < 1e-8, f"max gap {err:.1e}"


def check_flow_round_trip():
    model = build_flow(6, 4, (16, 16), rng=3)
    theta = model.theta + np.random.default_rng(4).normal(0, 0.1, model.theta.size)
    model.set_theta(theta)
    x = np.random.default_rng(5).normal(size=(200, 6))
    y, ld, _ = model.forward_cached(x)
    z, ldi, _ = model.inverse_cached(y)
    err = max(float(np.max(np.abs(z - x))), float(np.max(np.abs(ld + ldi))))
    return err < 1e-8, f"max error {err:.1e}"


def check_gradients():
    q1, q2 = ring_benchmark_pair(4)
    model = build_flow(4, 2, (8, 8), rng=1)
    rng = np.random.default_rng(2)
    theta = model.theta + rng.normal(0, 0.05, model.theta.size)
    x1, x2 = q1.sample(rng, 32).points, q2.sample(rng, 32).points
    obj = HybridObjective(model, q1, q2, x1, x2, 0.05, 0.05, 0.5)
    log_r = -1.0

    def fn(th):
        v, g, _ = obj.value_and_grad(th, log_r)
        return v, g

    err = finite_difference_check(fn, theta, h=1e-5)
    return err < 1e-4, f"max relative error {err:.1e}"


def check_gaussian_bridge():
    q1 = gaussian_target([0.0], [1.0])
    q2 = gaussian_target([0.0], [2.0])
    rng = np.random.default_rng(11)
    x1, x2 = q1.sample(rng, 5000).points, q2.sample(rng, 5000).points
    d1 = q1.log_unnorm(x1) - q2.log_unnorm(x1)
    d2 = q1.log_unnorm(x2) - q2.log_unnorm(x2)
    res = optimal_from_log_ratios(d1, d2, with_re2=True)
    truth = q1.exact_log_z - q2.exact_log_z
    gap = abs(res.log_r_hat - truth)
    return bool(gap < 4 * np.sqrt(res.re2_estimate)), f"|error| {gap:.1e}"


def run_checks(model_path=None):
    """List of ``(name, passed, detail)``."""
    groups = [
        ("generator identities", check_generators),
        ("estimator identities", check_estimator_identities),
        ("flow round trip", check_flow_round_trip),
        ("objective gradients", check_gradients),
        ("gaussian bridge", check_gaussian_bridge),
    ]
    results = []
    for name, fn in groups:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed command
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    if model_path is not None:
        try:
            model = load_flow(model_path)
            results.append(("model header", True, f"dim {model.dim}, {model.layer_count} layers"))
        except (ModelFormatError, OSError) as exc:
            results.append(("model header", False, str(exc)))
    return results
