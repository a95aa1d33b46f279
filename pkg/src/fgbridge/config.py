"""Declarative run configuration read from and written to YAML.

A config names the two targets, the sample sizes, the training settings and
what to run. ``emit_config(parse_config(text))`` is a fixed point for any
text that ``parse_config`` accepts.

Target kinds::

    gaussian      mean: [...], cov_diag: [...]
    ring_mixture  dim: p, preset: q1 | q2, variant: main | demo
                  or dim, mu1, mu2, s, sigma
    t_mixture     weights: [...], means: [[...], ...], scale: [[...], ...], nu
    augmented     base: <target>, extra_dims: k
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import yaml

from .bench import METHODS
from .densities import (
    RingMixtureParams,
    TargetDensity,
    augment_with_standard_normal,
    gaussian_target,
    ring_benchmark_pair,
    ring_mixture_target,
    t_mixture_target,
)
from .errors import ParameterError
from .fgb import TrainConfig

TARGET_KEYS = {
    "gaussian": ({"mean", "cov_diag"}, set()),
    "ring_mixture": ({"dim"}, {"preset", "variant", "mu1", "mu2", "s", "sigma"}),
    "t_mixture": ({"weights", "means", "scale", "nu"}, set()),
    "augmented": ({"base", "extra_dims"}, set()),
}
TRAIN_FIELDS = [f.name for f in fields(TrainConfig)]


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class RunConfig:
    q1: Dict[str, Any]
    q2: Dict[str, Any]
    n1: int
    n2: int
    method: str = "fgb"
    seed: int = 0
    output_dir: str = "fgb_out"
    train: TrainConfig = field(default_factory=TrainConfig)
    bench_methods: List[str] = field(default_factory=lambda: ["fgb"])
    reps: int = 100
    fixed_flow_reps: int = 0
    fixed_flow_n_prime: int = 1000

    def to_dict(self) -> Dict[str, Any]:
        train = asdict(self.train)
        train["hidden_sizes"] = list(train["hidden_sizes"])
        for key in ("r_betas", "phi_betas"):
            train[key] = list(train[key])
        return {
            "seed": self.seed,
            "method": self.method,
            "output_dir": self.output_dir,
            "q1": self.q1,
            "q2": self.q2,
            "samples": {"n1": self.n1, "n2": self.n2},
            "train": train,
            "bench": {
                "methods": list(self.bench_methods),
                "reps": self.reps,
                "fixed_flow": {"reps": self.fixed_flow_reps, "n_prime": self.fixed_flow_n_prime},
            },
        }

    def digest(self) -> str:
        """SHA-256 of the emitted config text."""
        return hashlib.sha256(emit_config(self).encode()).hexdigest()


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def _line_of(text: str, path):
    """1-based line of the node at ``path`` (a tuple of keys), or None."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for key in path:
        if not isinstance(node, yaml.MappingNode):
            break
        for k, v in node.value:
            if k.value == key:
                line = k.start_mark.line + 1
                node = v
                break
        else:
            break
    return line


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParameterError(f"field {name!r} must be an integer")
    if minimum is not None and value < minimum:
        raise ParameterError(f"field {name!r} must be at least {minimum}")
    return value


def _check_target(spec, where):
    if not isinstance(spec, dict):
        raise ParameterError(f"field {where!r} must be a mapping")
    if "kind" not in spec:
        raise ParameterError(f"missing required field '{where}.kind'")
    kind = spec["kind"]
    if kind not in TARGET_KEYS:
        raise ParameterError(f"unknown target kind {kind!r} in '{where}'")
    required, optional = TARGET_KEYS[kind]
    for key in sorted(required):
        if key not in spec:
            raise ParameterError(f"missing required field '{where}.{key}'")
    extra = set(spec) - required - optional - {"kind"}
    if extra:
        raise ParameterError(f"unknown field '{where}.{sorted(extra)[0]}'")
    if kind == "augmented":
        _check_target(spec["base"], f"{where}.base")
    # building catches bad values early and with the field path in the message
    build_target(spec)


def build_target(spec: Dict[str, Any]) -> TargetDensity:
    kind = spec["kind"]
    if kind == "gaussian":
        return gaussian_target(spec["mean"], spec["cov_diag"])
    if kind == "ring_mixture":
        dim = spec["dim"]
        if "preset" in spec:
            pair = ring_benchmark_pair(dim, spec.get("variant", "main"))
            if spec["preset"] not in ("q1", "q2"):
                raise ParameterError("ring_mixture preset must be q1 or q2")
            return pair[0] if spec["preset"] == "q1" else pair[1]
        params = RingMixtureParams(
            dim,
            tuple(spec.get("mu1", (2.0, 2.0))),
            tuple(spec.get("mu2", (-2.0, -2.0))),
            float(spec.get("s", 3.0)),
            float(spec.get("sigma", 1.0)),
        )
        return ring_mixture_target(params)
    if kind == "t_mixture":
        return t_mixture_target(spec["weights"], spec["means"], spec["scale"], spec["nu"])
    if kind == "augmented":
        return augment_with_standard_normal(build_target(spec["base"]), spec["extra_dims"])
    raise ParameterError(f"unknown target kind {kind!r}")


def parse_config(text: str) -> RunConfig:
    """Parse YAML text into a :class:`RunConfig`, raising :class:`ConfigError`."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"YAML syntax error: {problem}", line) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level", 1)

    path = ()
    try:
        for key in ("q1", "q2", "samples"):
            if key not in raw:
                raise ParameterError(f"missing required field {key!r}")
        known = {"seed", "method", "output_dir", "q1", "q2", "samples", "train", "bench"}
        extra = set(raw) - known
        if extra:
            path = (sorted(extra)[0],)
            raise ParameterError(f"unknown field {path[0]!r}")
        for key in ("q1", "q2"):
            path = (key,)
            _check_target(raw[key], key)
        path = ("samples",)
        samples = raw["samples"]
        if not isinstance(samples, dict):
            raise ParameterError("field 'samples' must be a mapping")
        for key in ("n1", "n2"):
            if key not in samples:
                raise ParameterError(f"missing required field 'samples.{key}'")
        n1 = _int(samples["n1"], "samples.n1", 2)
        n2 = _int(samples["n2"], "samples.n2", 2)

        path = ("method",)
        method = raw.get("method", "fgb")
        if method not in METHODS:
            raise ParameterError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        path = ("seed",)
        seed = _int(raw.get("seed", 0), "seed", 0)
        path = ("output_dir",)
        output_dir = str(raw.get("output_dir", "fgb_out"))

        path = ("train",)
        train_raw = raw.get("train") or {}
        if not isinstance(train_raw, dict):
            raise ParameterError("field 'train' must be a mapping")
        for key in train_raw:
            if key not in TRAIN_FIELDS:
                path = ("train", key)
                raise ParameterError(f"unknown field 'train.{key}'")
        train_kw = dict(train_raw)
        for key in ("hidden_sizes", "r_betas", "phi_betas"):
            if key in train_kw:
                train_kw[key] = tuple(train_kw[key])
        train = TrainConfig(**train_kw)

        path = ("bench",)
        bench = raw.get("bench") or {}
        if not isinstance(bench, dict):
            raise ParameterError("field 'bench' must be a mapping")
        methods = list(bench.get("methods", ["fgb"]))
        for m in methods:
            if m not in METHODS:
                path = ("bench", "methods")
                raise ParameterError(f"unknown method {m!r} in 'bench.methods'")
        reps = _int(bench.get("reps", 100), "bench.reps", 1)
        fixed = bench.get("fixed_flow") or {}
        ff_reps = _int(fixed.get("reps", 0), "bench.fixed_flow.reps", 0)
        ff_n = _int(fixed.get("n_prime", 1000), "bench.fixed_flow.n_prime", 2)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(str(exc), _line_of(text, path)) from None

    return RunConfig(raw["q1"], raw["q2"], n1, n2, method, seed, output_dir, train, methods, reps,
                     ff_reps, ff_n)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
