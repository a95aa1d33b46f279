"""Real-NVP affine coupling flow in plain numpy, with hand-written backprop.

A layer keeps the coordinates selected by its mask and maps the rest as
``y_B = mu(x_A) + exp(s(x_A)) * x_B``. The conditioner is a tanh MLP with a
linear head; the log-scale head is squashed to ``s_max * tanh(. / s_max)``.

All parameters of a :class:`FlowModel` live in one contiguous vector
``model.theta``; each layer's weight matrices are reshaped views into it, so
an optimizer can update ``theta`` in place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .densities import TargetDensity
from .errors import FlowNumericError, ModelFormatError, ParameterError

S_MAX = 5.0
FORMAT_VERSION = 1


def make_masks(dim: int, layer_count: int, kind: str = "interleave") -> List[np.ndarray]:
    """Boolean keep-masks for each layer; consecutive layers swap roles.

    ``interleave`` keeps even coordinates, then odd ones, and so on.
    ``half`` keeps the first ``ceil(dim/2)`` coordinates, then the rest.
    """
    idx = np.arange(dim)
    if kind == "interleave":
        base = idx % 2 == 0
    elif kind == "half":
        base = idx < (dim + 1) // 2
    else:
        raise ParameterError(f"unknown mask kind {kind!r}")
    return [base.copy() if k % 2 == 0 else ~base for k in range(layer_count)]


class CouplingLayer:
    """One affine coupling layer whose weights are views into a flat buffer."""

    def __init__(self, mask: np.ndarray, hidden_sizes: Sequence[int]):
        self.mask = np.asarray(mask, dtype=bool)
        self.keep = np.flatnonzero(self.mask)
        self.move = np.flatnonzero(~self.mask)
        if self.keep.size == 0 or self.move.size == 0:
            raise ParameterError("a coupling mask must keep and move at least one coordinate")
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        sizes = (self.keep.size,) + self.hidden_sizes + (2 * self.move.size,)
        self.shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.shapes.append((fan_in, fan_out))
            self.shapes.append((fan_out,))
        self.size = int(sum(np.prod(s) for s in self.shapes))
        self.params: List[np.ndarray] = []

    def bind(self, buffer: np.ndarray):
        """Point this layer's weights at ``buffer`` (length ``self.size``)."""
        self.params = []
        off = 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            self.params.append(buffer[off:off + n].reshape(shape))
            off += n

    # -- conditioner -------------------------------------------------------

    def _conditioner(self, xa):
        acts = [xa]
        h = xa
        n_lin = len(self.params) // 2
        for i in range(n_lin - 1):
            h = np.tanh(h @ self.params[2 * i] + self.params[2 * i + 1])
            acts.append(h)
        out = h @ self.params[-2] + self.params[-1]
        m = self.move.size
        shift = out[:, :m]
        squash = np.tanh(out[:, m:] / S_MAX)
        return shift, S_MAX * squash, squash, acts

    def _conditioner_vjp(self, acts, squash, g_shift, g_logscale, grad_buf):
        g_out = np.concatenate([g_shift, g_logscale * (1.0 - squash**2)], axis=1)
        n_lin = len(self.params) // 2
        views = []
        off = 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            views.append(grad_buf[off:off + n].reshape(shape))
            off += n
        g = g_out
        for i in reversed(range(n_lin)):
            a_in = acts[i]
            views[2 * i] += a_in.T @ g
            views[2 * i + 1] += g.sum(axis=0)
            g = g @ self.params[2 * i].T
            if i > 0:
                g = g * (1.0 - acts[i] ** 2)
        return g

    # -- transforms --------------------------------------------------------

    def forward(self, x):
        xa = x[:, self.keep]
        xb = x[:, self.move]
        shift, logscale, squash, acts = self._conditioner(xa)
        scale = np.exp(logscale)
        y = np.empty_like(x)
        y[:, self.keep] = xa
        y[:, self.move] = shift + scale * xb
        cache = (acts, squash, scale, xb)
        return y, logscale.sum(axis=1), cache

    def forward_vjp(self, cache, gy, g_logdet, grad_buf):
        acts, squash, scale, xb = cache
        gyb = gy[:, self.move]
        g_logscale = gyb * scale * xb + g_logdet[:, None]
        g_xa = self._conditioner_vjp(acts, squash, gyb, g_logscale, grad_buf)
        gx = np.empty_like(gy)
        gx[:, self.keep] = gy[:, self.keep] + g_xa
        gx[:, self.move] = gyb * scale
        return gx

    def inverse(self, y):
        ya = y[:, self.keep]
        yb = y[:, self.move]
        shift, logscale, squash, acts = self._conditioner(ya)
        inv_scale = np.exp(-logscale)
        xb = (yb - shift) * inv_scale
        x = np.empty_like(y)
        x[:, self.keep] = ya
        x[:, self.move] = xb
        cache = (acts, squash, inv_scale, xb)
        return x, -logscale.sum(axis=1), cache

    def inverse_vjp(self, cache, gx, g_logdet, grad_buf):
        acts, squash, inv_scale, xb = cache
        gxb = gx[:, self.move]
        g_shift = -gxb * inv_scale
        g_logscale = -gxb * xb - g_logdet[:, None]
        g_ya = self._conditioner_vjp(acts, squash, g_shift, g_logscale, grad_buf)
        gy = np.empty_like(gx)
        gy[:, self.keep] = gx[:, self.keep] + g_ya
        gy[:, self.move] = gxb * inv_scale
        return gy


class FlowModel:
    """A stack of coupling layers sharing one flat parameter vector ``theta``."""

    def __init__(self, dim: int, layer_count: int, hidden_sizes=(64, 64), mask_kind: str = "interleave"):
        if int(dim) != dim or dim < 2:
            raise ParameterError(
                f"a coupling flow needs dim >= 2 (got {dim}); pad the target with "
                "augment_with_standard_normal first"
            )
        if int(layer_count) != layer_count or layer_count < 1:
            raise ParameterError("layer_count must be a positive integer")
        self.dim = int(dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.mask_kind = mask_kind
        self.layers = [CouplingLayer(m, self.hidden_sizes) for m in make_masks(self.dim, int(layer_count), mask_kind)]
        self.offsets = np.cumsum([0] + [layer.size for layer in self.layers])
        self.theta = np.zeros(int(self.offsets[-1]))
        for k, layer in enumerate(self.layers):
            layer.bind(self.theta[self.offsets[k]:self.offsets[k + 1]])

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def set_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.theta.shape:
            raise ParameterError(f"theta must have shape {self.theta.shape}, got {theta.shape}")
        self.theta[...] = theta

    def copy(self) -> "FlowModel":
        other = FlowModel(self.dim, self.layer_count, self.hidden_sizes, self.mask_kind)
        other.set_theta(self.theta)
        return other

    def unflatten(self, theta=None):
        """Per-layer lists of weight arrays (copies) for ``theta`` or the current vector."""
        theta = self.theta if theta is None else np.asarray(theta, dtype=float)
        out = []
        for k, layer in enumerate(self.layers):
            chunk = theta[self.offsets[k]:self.offsets[k + 1]]
            arrays, off = [], 0
            for shape in layer.shapes:
                n = int(np.prod(shape))
                arrays.append(chunk[off:off + n].reshape(shape).copy())
                off += n
            out.append(arrays)
        return out

    @staticmethod
    def flatten(layer_arrays) -> np.ndarray:
        return np.concatenate([a.ravel() for arrays in layer_arrays for a in arrays])

    def param_blocks(self):
        """``(name, slice)`` pairs naming each weight/bias block in ``theta``."""
        blocks = []
        for k, layer in enumerate(self.layers):
            off = int(self.offsets[k])
            for i, shape in enumerate(layer.shapes):
                n = int(np.prod(shape))
                kind = "weight" if i % 2 == 0 else "bias"
                blocks.append((f"layer{k}.linear{i // 2}.{kind}", slice(off, off + n)))
                off += n
        return blocks

    # -- batch transforms with caches ---------------------------------------

    def forward_cached(self, x):
        logdet = np.zeros(x.shape[0])
        caches = []
        for k, layer in enumerate(self.layers):
            x, ld, cache = layer.forward(x)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(ld))):
                raise FlowNumericError(f"non-finite output in coupling layer {k} (forward)", k)
            logdet += ld
            caches.append(cache)
        return x, logdet, caches

    def forward_vjp(self, caches, gy, g_logdet):
        grad = np.zeros_like(self.theta)
        for k in reversed(range(self.layer_count)):
            buf = grad[self.offsets[k]:self.offsets[k + 1]]
            gy = self.layers[k].forward_vjp(caches[k], gy, g_logdet, buf)
        return gy, grad

    def inverse_cached(self, y):
        logdet = np.zeros(y.shape[0])
        caches = [None] * self.layer_count
        for k in reversed(range(self.layer_count)):
            y, ld, cache = self.layers[k].inverse(y)
            if not (np.all(np.isfinite(y)) and np.all(np.isfinite(ld))):
                raise FlowNumericError(f"non-finite output in coupling layer {k} (inverse)", k)
            logdet += ld
            caches[k] = cache
        return y, logdet, caches

    def inverse_vjp(self, caches, gx, g_logdet):
        grad = np.zeros_like(self.theta)
        for k in range(self.layer_count):
            buf = grad[self.offsets[k]:self.offsets[k + 1]]
            gx = self.layers[k].inverse_vjp(caches[k], gx, g_logdet, buf)
        return gx, grad


def build_flow(dim: int, layer_count: int = 4, hidden_sizes=(64, 64), rng=None,
               mask_kind: str = "interleave", init_scale: float = 1.0) -> FlowModel:
    """Real-NVP with random hidden weights and zero output heads (identity map).

    Hidden weights are ``N(0, init_scale^2 / fan_in)``; biases and the output
    layer start at zero, so the fresh flow is exactly the identity.
    """
    model = FlowModel(dim, layer_count, hidden_sizes, mask_kind)
    rng = np.random.default_rng(rng)
    for layer in model.layers:
        n_lin = len(layer.params) // 2
        for i in range(n_lin - 1):
            w = layer.params[2 * i]
            w[...] = rng.standard_normal(w.shape) * (init_scale / math.sqrt(w.shape[0]))
    return model


def _as_batch(x, dim):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != dim:
        raise ParameterError(f"expected points of dimension {dim}, got {arr.shape[1]}")
    return arr, single


def forward(model: FlowModel, x):
    """``(T(x), log|det dT/dx|)`` for a point ``(dim,)`` or batch ``(n, dim)``."""
    arr, single = _as_batch(x, model.dim)
    y, logdet, _ = model.forward_cached(arr)
    return (y[0], float(logdet[0])) if single else (y, logdet)


def inverse(model: FlowModel, y):
    """``(T^-1(y), log|det dT^-1/dy|)``; mirror of :func:`forward`."""
    arr, single = _as_batch(y, model.dim)
    x, logdet, _ = model.inverse_cached(arr)
    return (x[0], float(logdet[0])) if single else (x, logdet)


def transformed_log_unnorm(model: FlowModel, base: TargetDensity, y):
    """``log q~1(T^-1(y)) + log|det dT^-1/dy|``; same normalizing constant as ``base``."""
    if base.dim != model.dim:
        raise ParameterError("flow and base density dimensions differ")
    x, logdet = inverse(model, y)
    return base.log_unnorm(x) + logdet


def transformed_target(model: FlowModel, base: TargetDensity) -> TargetDensity:
    """Freeze the current flow into a :class:`TargetDensity` (no score)."""
    frozen = model.copy()

    def log_unnorm(y):
        return transformed_log_unnorm(frozen, base, y)

    sampler = None
    if base.sampler is not None:
        def sampler(rng, n):
            return forward(frozen, base.sampler(rng, n))[0]

    return TargetDensity(base.dim, log_unnorm, base.exact_log_z, sampler, None, f"T#{base.name}")


# ---------------------------------------------------------------------------
# Persistence


def save_flow(model: FlowModel, path, mask_seed=None):
    """Write ``theta`` and an architecture header to an ``.npz`` file."""
    header = {
        "format": FORMAT_VERSION,
        "dim": model.dim,
        "layer_count": model.layer_count,
        "hidden_sizes": list(model.hidden_sizes),
        "mask_kind": model.mask_kind,
        "mask_seed": mask_seed,
        "s_max": S_MAX,
        "theta_size": int(model.theta.size),
    }
    with open(path, "wb") as fh:
        np.savez(fh, theta=model.theta, header=np.array(json.dumps(header, sort_keys=True)))


def load_flow(path) -> FlowModel:
    """Inverse of :func:`save_flow`; raises :class:`ModelFormatError` on mismatch."""
    try:
        with np.load(path, allow_pickle=False) as data:
            theta = np.array(data["theta"], dtype=float)
            header = json.loads(str(data["header"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ModelFormatError(f"cannot read flow file {path}: {exc}") from exc
    required = ("format", "dim", "layer_count", "hidden_sizes", "mask_kind", "theta_size")
    missing = [k for k in required if k not in header]
    if missing:
        raise ModelFormatError(f"flow header missing fields: {', '.join(missing)}")
    if header["format"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported flow format {header['format']!r}")
    try:
        model = FlowModel(header["dim"], header["layer_count"], header["hidden_sizes"], header["mask_kind"])
    except (ParameterError, TypeError) as exc:
        raise ModelFormatError(f"invalid flow architecture in header: {exc}") from exc
    if theta.shape != model.theta.shape or header["theta_size"] != theta.size:
        raise ModelFormatError(
            f"theta has {theta.size} entries but the header architecture needs {model.theta.size}"
        )
    model.set_theta(theta)
    return model
