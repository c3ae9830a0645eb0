"""Small dense networks with explicit forward/backward passes.

Parameters are plain float64 numpy arrays, gradients are computed by hand in
reverse mode (verified against central finite differences in the test suite),
and the optimizer is a self-contained adaptive-moment implementation. Keeping
this dependency-free makes training byte-for-byte reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


class ShapeMismatch(ValueError):
    """Input or upstream vector does not match the network's layer widths."""


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)


@dataclass
class MlpParams:
    layers: list[Layer]
    activations: list[str]

    def __post_init__(self):
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if len(self.layers) != len(self.activations):
            raise ValueError("one activation tag per layer required")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weights.shape[1] != a.weights.shape[0]:
                raise ShapeMismatch("adjacent layer dimensions do not chain")

    @property
    def in_size(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.layers[-1].weights.shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams([Layer(l.weights.copy(), l.bias.copy()) for l in self.layers],
                         list(self.activations))

    def flat(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend([l.weights, l.bias])
        return out


def mlp_create(sizes: list[int], activations: list[str], rng: np.random.Generator) -> MlpParams:
    """Uniform fan-in initialization, zero biases."""
    layers = []
    for n_in, n_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        layers.append(Layer(rng.uniform(-bound, bound, (n_out, n_in)), np.zeros(n_out)))
    return MlpParams(layers, list(activations))


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(z: np.ndarray, a: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return (z > 0.0).astype(np.float64)
    if act == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def mlp_forward(p: MlpParams, x) -> np.ndarray:
    """Evaluate on a (d,) vector or (n, d) batch."""
    out, _ = mlp_forward_cached(p, x)
    return out


def mlp_forward_cached(p: MlpParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x.reshape(1, -1) if single else x
    if a.shape[1] != p.in_size:
        raise ShapeMismatch(f"input width {a.shape[1]} != expected {p.in_size}")
    cache = [(None, a)]
    for layer, act in zip(p.layers, p.activations):
        z = a @ layer.weights.T + layer.bias
        a = _activate(z, act)
        cache.append((z, a))
    return (a[0] if single else a), cache


def mlp_backward(p: MlpParams, cache, upstream):
    """Gradients of sum(output * upstream) w.r.t. parameters and input.

    Returns (grads, input_grad) where grads mirrors p.layers as a list of
    Layer objects holding dW and db.
    """
    up = np.asarray(upstream, dtype=np.float64)
    single = up.ndim == 1
    d_a = up.reshape(1, -1) if single else up.copy()
    if d_a.shape[1] != p.out_size:
        raise ShapeMismatch(f"upstream width {d_a.shape[1]} != output {p.out_size}")
    grads = [None] * len(p.layers)
    for i in range(len(p.layers) - 1, -1, -1):
        z, a = cache[i + 1]
        d_z = d_a * _activate_grad(z, a, p.activations[i])
        a_prev = cache[i][1]
        grads[i] = Layer(d_z.T @ a_prev, d_z.sum(axis=0))
        d_a = d_z @ p.layers[i].weights
    return grads, (d_a[0] if single else d_a)


def mlp_gradients(p: MlpParams, x, upstream):
    """Convenience: forward then backward in one call."""
    _, cache = mlp_forward_cached(p, x)
    return mlp_backward(p, cache, upstream)


@dataclass
class Adam:
    """Adaptive-moment optimizer over a list of parameter arrays."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(x) for x in params]
            self.v = [np.zeros_like(x) for x in params]
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for x, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            x -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class RunningNorm:
    """Streaming mean/std normalizer with clipped output."""

    size: int
    clip: float = 5.0
    std_floor: float = 1e-3
    count: float = 0.0
    total: np.ndarray = None
    total_sq: np.ndarray = None

    def __post_init__(self):
        if self.total is None:
            self.total = np.zeros(self.size)
        if self.total_sq is None:
            self.total_sq = np.zeros(self.size)

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.size)
        self.count += batch.shape[0]
        self.total += batch.sum(axis=0)
        self.total_sq += (batch ** 2).sum(axis=0)

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.count if self.count > 0 else np.zeros(self.size)

    @property
    def std(self) -> np.ndarray:
        if self.count <= 0:
            return np.ones(self.size)
        var = self.total_sq / self.count - self.mean ** 2
        return np.sqrt(np.maximum(var, self.std_floor ** 2))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((np.asarray(x, dtype=np.float64) - self.mean) / self.std,
                       -self.clip, self.clip)
