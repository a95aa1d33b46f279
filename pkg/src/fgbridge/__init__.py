"""Bridge sampling with f-GAN trained normalizing-flow transports.

Estimates log ratios of normalizing constants ``log(Z1 / Z2)`` between two
unnormalized densities, optionally after warping the first density with a
Real-NVP flow trained to minimize the weighted harmonic divergence, and
reports a variational estimate of the relative mean square error.
"""

from .densities import (
    RingMixtureParams,
    SampleBatch,
    TargetDensity,
    augment_with_standard_normal,
    gaussian_target,
    ring_benchmark_pair,
    ring_mixture_target,
    t_mixture_target,
)
from .divergences import (
    DivergenceEstimate,
    GeneratorFunction,
    estimate_harmonic_divergence,
    estimate_re2,
    make_generator,
    quadrature_divergence_oracle,
    variational_objective,
)
from .bridge import (
    BridgeResult,
    general_f_bridge,
    geometric_bridge,
    importance_sampling_bridge,
    optimal_bridge,
    split_samples,
)
from .flow import FlowModel, build_flow, forward, inverse, transformed_log_unnorm
from .fgb import TrainConfig, TrainReport, fgb_estimate, hybrid_objective, train
from .bench import ExperimentSpec, RepetitionSummary, fixed_flow_re2_study, run_repetitions
from .config import RunConfig, emit_config, load_config, parse_config

__version__ = "0.1.0"
