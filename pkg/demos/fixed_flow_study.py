"""Freeze one trained flow and repeat only the bridge step on fresh draws.

For the main ring benchmark this prints the mean RE^2 estimate over the
repetitions next to the Monte Carlo MSE of log r_hat against the exact
value. The two columns should agree with each other whenever the first-order
approximation is adequate, whatever the quality of the flow.

Usage: python fixed_flow_study.py [p] [reps]
"""

import sys

import numpy as np

from fgbridge import TrainConfig, fgb_estimate, fixed_flow_re2_study, ring_benchmark_pair


def main(p=12, reps=100, n_prime=1000, seed=0):
    q1, q2 = ring_benchmark_pair(p)
    rng = np.random.default_rng(seed)
    s1, s2 = q1.sample(rng, 2 * n_prime), q2.sample(rng, 2 * n_prime)
    _, report, det = fgb_estimate(TrainConfig(seed=seed), q1, q2, s1, s2, return_details=True)
    print(f"trained {report.epochs_run} epochs ({report.stopped_by})")
    s = fixed_flow_re2_study(det.model, q1, q2, n_prime, reps, seed=seed + 1)
    print("p\tmean_re2 (se)\tmc_mse (se)\tsaturated\tfailures")
    print(f"{p}\t{s.mean_re2_estimate:.3g} ({s.mean_re2_se:.2g})\t{s.mc_mse_log_r:.3g} ({s.mc_mse_se:.2g})"
          f"\t{s.saturated}\t{s.failures}")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
