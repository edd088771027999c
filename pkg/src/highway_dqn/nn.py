"""Dense ReLU network with hand-written backprop and an Adam optimizer.

Everything is float64. Parameters are immutable values: the optimizer
returns a new :class:`ParameterSet` instead of updating in place.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

FORMAT_VERSION = 1
MAGIC = b"HWQN"


class WeightsFormatError(ValueError):
    """Base class for weights-file decoding failures."""


class VersionMismatchError(WeightsFormatError):
    pass


class TruncatedPayloadError(WeightsFormatError):
    pass


class ShapeMismatchError(WeightsFormatError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 25
    hidden: Tuple[int, ...] = (256, 256)
    output_dim: int = 5

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min(self.dims) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {self.dims}")

    @property
    def dims(self) -> Tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)


@dataclass(frozen=True, eq=False)
class ParameterSet:
    spec: NetworkSpec
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    version: int = FORMAT_VERSION

    def __post_init__(self):
        dims = self.spec.dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeMismatchError("layer count does not match spec")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
                raise ShapeMismatchError(
                    f"layer {k}: got W{w.shape} b{b.shape}, spec wants "
                    f"W{(dims[k + 1], dims[k])} b{(dims[k + 1],)}")

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def equals(self, other: "ParameterSet") -> bool:
        return (self.spec == other.spec
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))


@dataclass(frozen=True, eq=False)
class GradientSet:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.arrays())))

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(tuple(w * factor for w in self.weights),
                           tuple(b * factor for b in self.biases))


def init_params(spec: NetworkSpec, seed: int) -> ParameterSet:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    dims = spec.dims
    weights = tuple(rng.normal(0.0, np.sqrt(2.0 / dims[k]), size=(dims[k + 1], dims[k]))
                    for k in range(len(dims) - 1))
    biases = tuple(np.zeros(dims[k + 1]) for k in range(len(dims) - 1))
    return ParameterSet(spec, weights, biases)


def _check_input(params: ParameterSet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.spec.input_dim or x.ndim not in (1, 2):
        raise ValueError(f"expected input of length {params.spec.input_dim}, got shape {x.shape}")
    return x


def forward(params: ParameterSet, x) -> np.ndarray:
    """Q-values for one input vector or a batch of row vectors."""
    h = _check_input(params, x)
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def loss_and_gradients(params: ParameterSet, states, actions, targets):
    """Mean squared TD error on the taken actions and its exact gradient.

    Returns ``(loss, GradientSet)`` with
    ``loss = mean_i (targets_i - Q(states_i)[actions_i])**2``.
    """
    x = _check_input(params, states)
    if x.ndim == 1:
        x = x[None, :]
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    batch = x.shape[0]
    if actions.shape[0] != batch or targets.shape[0] != batch:
        raise ValueError("states, actions and targets must share the batch dimension")
    if actions.size and (actions.min() < 0 or actions.max() >= params.spec.output_dim):
        raise ValueError(f"actions must lie in [0, {params.spec.output_dim - 1}]")

    # forward, keeping post-activations of every layer
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    rows = np.arange(batch)
    err = acts[-1][rows, actions] - targets
    loss = float(np.mean(err * err))

    delta = np.zeros_like(acts[-1])
    delta[rows, actions] = 2.0 * err / batch
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    for k in range(last, -1, -1):
        grad_w[k] = delta.T @ acts[k]
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * (acts[k] > 0)
    return loss, GradientSet(tuple(grad_w), tuple(grad_b))


def clip_gradients(grads: GradientSet, max_norm) -> GradientSet:
    """Rescale so the global L2 norm is at most ``max_norm`` (None disables)."""
    if max_norm is None:
        return grads
    norm = grads.global_norm()
    if norm > max_norm:
        return grads.scaled(max_norm / norm)
    return grads


@dataclass(eq=False)
class OptimizerState:
    m: Tuple[np.ndarray, ...]
    v: Tuple[np.ndarray, ...]
    step: int = 0
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ParameterSet, **hyper) -> "OptimizerState":
        zeros = tuple(np.zeros_like(a) for a in params.arrays())
        return cls(m=zeros, v=tuple(np.zeros_like(a) for a in zeros), **hyper)


def adam_step(params: ParameterSet, grads: GradientSet, opt: OptimizerState):
    """One bias-corrected Adam update. Returns ``(new_params, new_opt)``."""
    p = list(params.arrays())
    g = list(grads.arrays())
    if len(g) != len(p) or any(a.shape != b.shape for a, b in zip(p, g)):
        raise ShapeMismatchError("gradients are not shape-congruent with parameters")
    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_m, new_v, new_p = [], [], []
    for p_k, g_k, m_k, v_k in zip(p, g, opt.m, opt.v):
        m_k = b1 * m_k
        m_k += (1.0 - b1) * g_k
        v_k = b2 * v_k
        v_k += (1.0 - b2) * (g_k * g_k)
        denom = np.sqrt(v_k / bc2)
        denom += opt.eps
        update = m_k / bc1
        update /= denom
        update *= opt.learning_rate
        new_p.append(p_k - update)
        new_m.append(m_k)
        new_v.append(v_k)
    params = ParameterSet(params.spec, tuple(new_p[0::2]), tuple(new_p[1::2]), params.version)
    opt = OptimizerState(tuple(new_m), tuple(new_v), t, opt.learning_rate, b1, b2, opt.eps)
    return params, opt


# Weights file layout (little-endian):
#   4s magic | u8 version | u32 n_layers | (n_layers + 1) x u32 dims
#   then per layer: W (out x in, row-major f64), b (out f64)

def serialize_params(params: ParameterSet) -> bytes:
    dims = params.spec.dims
    parts = [MAGIC, struct.pack("<BI", FORMAT_VERSION, len(dims) - 1),
             struct.pack(f"<{len(dims)}I", *dims)]
    for arr in params.arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def deserialize_params(payload: bytes) -> ParameterSet:
    header = len(MAGIC) + 5
    if len(payload) < header:
        raise TruncatedPayloadError(f"payload of {len(payload)} bytes is shorter than the header")
    if payload[:len(MAGIC)] != MAGIC:
        raise WeightsFormatError("not a weights file (bad magic)")
    version, n_layers = struct.unpack_from("<BI", payload, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"weights format version {version}, expected {FORMAT_VERSION}")
    if n_layers < 1 or n_layers > 64:
        raise ShapeMismatchError(f"implausible layer count {n_layers}")
    offset = header
    if len(payload) < offset + 4 * (n_layers + 1):
        raise TruncatedPayloadError("payload ends inside the shape table")
    dims = struct.unpack_from(f"<{n_layers + 1}I", payload, offset)
    offset += 4 * (n_layers + 1)
    if min(dims) < 1:
        raise ShapeMismatchError(f"shape table contains a zero dimension: {dims}")
    expected = offset + 8 * sum(dims[k + 1] * (dims[k] + 1) for k in range(n_layers))
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, shape table needs {expected}")
    if len(payload) > expected:
        raise ShapeMismatchError(
            f"payload has {len(payload) - expected} trailing bytes beyond the shape table")

    weights, biases = [], []
    for k in range(n_layers):
        n_in, n_out = dims[k], dims[k + 1]
        w = np.frombuffer(payload, dtype="<f8", count=n_out * n_in, offset=offset)
        offset += 8 * n_out * n_in
        b = np.frombuffer(payload, dtype="<f8", count=n_out, offset=offset)
        offset += 8 * n_out
        weights.append(w.reshape(n_out, n_in).astype(np.float64))
        biases.append(b.astype(np.float64))
    spec = NetworkSpec(dims[0], tuple(dims[1:-1]), dims[-1])
    return ParameterSet(spec, tuple(weights), tuple(biases), version)
