"""Dense MLP with hand-derived backprop, Adam, and seeded randomness.

Everything is float64 numpy. The layer vocabulary is closed (dense layers,
leaky ReLU on hidden units, linear output), so gradients are written out
by hand rather than through a general tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, InternalConsistencyError, NumericError

LEAKY_SLOPE = 0.2


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give bit-identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def leaky_relu(a: np.ndarray) -> np.ndarray:
    # valid because the slope is below 1
    return np.maximum(a, LEAKY_SLOPE * a)


@dataclass
class Params:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "linear"
    # bumped on every in-place update so stale caches can be detected
    version: int = field(default=0, compare=False)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Flat view: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                      self.hidden_activation, self.output_activation)

    def zeros_like(self) -> "Params":
        return Params([np.zeros_like(w) for w in self.weights],
                      [np.zeros_like(b) for b in self.biases],
                      self.hidden_activation, self.output_activation)


@dataclass
class MlpCache:
    inputs: list[np.ndarray]  # input to each dense layer
    pre: list[np.ndarray]  # pre-activation of each hidden layer
    params_id: int
    params_version: int


def mlp_init(layer_sizes, rng: np.random.Generator) -> Params:
    """He-normal weights (std sqrt(2/fan_in)), zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"layer_sizes must have >= 2 positive entries, got {list(layer_sizes)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return Params(weights, biases)


def mlp_forward(params: Params, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise DimensionError(f"input shape {x.shape} does not match input width {params.weights[0].shape[0]}")
    inputs, pre = [], []
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w + b
        if i < last:
            pre.append(a)
            h = leaky_relu(a)
        else:
            h = a
    return h, MlpCache(inputs, pre, id(params), params.version)


def mlp_apply(params: Params, x: np.ndarray) -> np.ndarray:
    """Forward pass without keeping the cache."""
    h = np.asarray(x, dtype=np.float64)
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = leaky_relu(h)
    return h


def mlp_backward(params: Params, cache: MlpCache, grad_y: np.ndarray) -> tuple[Params, np.ndarray]:
    """Gradients w.r.t. weights/biases and the input, given dL/dy."""
    if cache.params_id != id(params) or cache.params_version != params.version \
            or len(cache.inputs) != params.n_layers:
        raise InternalConsistencyError("cache was produced by different or since-modified params")
    batch = cache.inputs[0].shape[0]
    if grad_y.shape != (batch, params.weights[-1].shape[1]):
        raise DimensionError(f"grad_y shape {grad_y.shape} does not match output "
                             f"({batch}, {params.weights[-1].shape[1]})")
    gw = [None] * params.n_layers
    gb = [None] * params.n_layers
    g = grad_y
    for i in range(params.n_layers - 1, -1, -1):
        if i < params.n_layers - 1:
            g = g * np.where(cache.pre[i] > 0, 1.0, LEAKY_SLOPE)
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return Params(gw, gb, params.hidden_activation, params.output_activation), g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params_list, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        """Zero moments for one Params or a list of them (optimized jointly)."""
        if isinstance(params_list, Params):
            params_list = [params_list]
        arrays = [a for p in params_list for a in p.arrays()]
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, learning_rate, beta1, beta2, epsilon)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` are a Params or matching lists of Params.
    Returns ``(params, state)`` for convenience.
    """
    p_list = [params] if isinstance(params, Params) else list(params)
    g_list = [grads] if isinstance(grads, Params) else list(grads)
    p_arrays = [a for p in p_list for a in p.arrays()]
    g_arrays = [a for g in g_list for a in g.arrays()]
    if len(p_arrays) != len(state.m) or len(g_arrays) != len(p_arrays):
        raise DimensionError("params, grads and optimizer state do not line up")
    for k, (p, g) in enumerate(zip(p_arrays, g_arrays)):
        if p.shape != g.shape or p.shape != state.m[k].shape:
            raise DimensionError(f"shape mismatch in array {k}: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {k // 2}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    for p in p_list:
        p.version += 1
    return params, state
