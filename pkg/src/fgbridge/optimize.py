"""Derivative-free 1-d maximization: coarse grid, then golden-section refinement."""

from __future__ import annotations

import math

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(fn, a: float, b: float, xtol: float = 1e-6, max_iter: int = 200):
    """Maximize a unimodal ``fn`` on ``[a, b]`` to absolute tolerance ``xtol``.

    Returns ``(x, fn(x))``.
    """
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= xtol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    fx = fn(x)
    # keep the best point seen in the final bracket
    for xi, fi in ((c, fc), (d, fd)):
        if fi > fx:
            x, fx = xi, fi
    return x, fx


def maximize_scalar(fn, lo: float, hi: float, grid_points: int = 64, xtol: float = 1e-6):
    """Grid search over ``[lo, hi]`` followed by golden section around the best cell.

    ``fn`` must accept a numpy array of candidates for the grid stage and a
    float afterwards. Returns ``(x, fn(x), at_boundary)``.
    """
    grid = np.linspace(lo, hi, grid_points)
    vals = np.asarray(fn(grid), dtype=float)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, grid_points - 1)]
    x, fx = golden_section_max(lambda t: float(fn(t)), a, b, xtol=xtol)
    if vals[k] > fx:
        x, fx = float(grid[k]), float(vals[k])
    at_boundary = (x - lo) <= 2 * xtol or (hi - x) <= 2 * xtol
    return float(x), float(fx), bool(at_boundary)
