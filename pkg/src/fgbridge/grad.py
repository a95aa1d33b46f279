"""Gradient records, an adaptive-moment optimizer and a finite-difference verifier."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GradientError, ParameterError


@dataclass
class GradientRecord:
    """Objective value with its gradients in the flow parameters and ``log r~``."""

    value: float
    d_theta: np.ndarray
    d_log_r: float


def objective_with_gradients(value_and_grad, theta, log_r, blocks=None) -> GradientRecord:
    """Evaluate ``value_and_grad(theta, log_r) -> (value, d_theta, d_log_r)`` and validate it.

    ``blocks`` is an optional list of ``(name, slice)`` pairs used to name the
    parameter block holding the first non-finite gradient entry.
    """
    value, d_theta, d_log_r = value_and_grad(np.asarray(theta, dtype=float), float(log_r))
    d_theta = np.asarray(d_theta, dtype=float)
    if d_theta.shape != np.shape(theta):
        raise ParameterError("gradient length does not match theta")
    if not np.isfinite(d_log_r):
        raise GradientError("non-finite gradient with respect to log r", "log_r")
    bad = np.flatnonzero(~np.isfinite(d_theta))
    if bad.size:
        name = f"theta[{bad[0]}]"
        for block_name, sl in blocks or ():
            if sl.start <= bad[0] < sl.stop:
                name = block_name
                break
        raise GradientError(f"non-finite gradient in parameter block {name}", name)
    return GradientRecord(float(value), d_theta, float(d_log_r))


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, size, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(np.zeros(size), np.zeros(size), 0, learning_rate, beta1, beta2, epsilon)


def adam_step(state: OptimizerState, grads, params):
    """One bias-corrected adaptive-moment descent step.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    """
    g = np.asarray(grads, dtype=float)
    p = np.asarray(params, dtype=float)
    if g.shape != p.shape or g.shape != state.first_moment.shape:
        raise ParameterError("gradient, parameter and moment shapes must match")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_p = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_p, replace(state, first_moment=m, second_moment=v, step_count=t)


def finite_difference_check(objective, point, h: float = 1e-5, analytic=None) -> float:
    """Max relative gap between central differences of ``objective`` and ``analytic``.

    ``objective`` maps a vector to a float. ``analytic`` is the gradient to
    check (a vector); when omitted, ``objective`` must instead return a
    ``(value, gradient)`` pair. The denominator has an absolute floor of 1e-8.
    """
    if not h > 0:
        raise ParameterError("step h must be positive")
    x = np.array(point, dtype=float)
    if analytic is None:
        def value(z):
            return objective(z)[0]
        analytic = np.asarray(objective(x)[1], dtype=float)
    else:
        value = objective
        analytic = np.asarray(analytic, dtype=float)
    fd = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = value(x)
        x[i] = old - h
        down = value(x)
        x[i] = old
        fd[i] = (up - down) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-8)
    return float(np.max(np.abs(fd - analytic) / denom))
