"""Minimal feed-forward network machinery on float64 numpy arrays.

Forward evaluation, exact reverse-mode gradients, Adam, and soft target
updates for small fixed-topology MLPs. Everything is deterministic given
an explicitly passed ``numpy.random.Generator``; there is no global state.

Inputs may be a single vector ``(d,)`` or a batch ``(m, d)``. Parameter
gradients returned by :func:`backward` are summed over the batch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh", "mish")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


class ShapeMismatchError(ValueError):
    """Input or gradient dimensions do not match the network."""

    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class ArchitectureMismatchError(ValueError):
    """Two networks that must share an architecture do not."""


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "mish":
        return z * np.tanh(_softplus(z))
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    """d activation / d preactivation, evaluated at z."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "mish":
        t = np.tanh(_softplus(z))
        return t + z * (1.0 - t * t) * _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class MlpNetwork:
    """Fully connected network; weights[i] has shape (sizes[i+1], sizes[i])."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays, weights and biases interleaved."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def architecture(self) -> tuple:
        return (tuple(self.layer_sizes), self.hidden_activation, self.output_activation)


@dataclass
class Gradients:
    """Parameter gradients mirroring an MlpNetwork's weight/bias lists."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_mlp(
    layer_sizes: list[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
) -> MlpNetwork:
    """Glorot-uniform weights, zero biases, float64 throughout."""
    if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
        raise ValueError(f"layer_sizes must be >=2 positive entries, got {layer_sizes}")
    if hidden_activation not in HIDDEN_ACTIVATIONS:
        raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(list(layer_sizes), weights, biases, hidden_activation, output_activation)


def clone_network(net: MlpNetwork) -> MlpNetwork:
    return copy.deepcopy(net)


def _check_input(net: MlpNetwork, x: np.ndarray, what: str, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != dim:
        raise ShapeMismatchError(what, f"(..., {dim})", x.shape)
    return x


def forward(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; returns (out,) for a vector, (m, out) for a batch."""
    x = _check_input(net, x, "input", net.input_dim)
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        act = net.output_activation if i == last else net.hidden_activation
        h = _activate(act, z)
    return h


def backward(
    net: MlpNetwork, x: np.ndarray, output_grad: np.ndarray
) -> tuple[Gradients, np.ndarray]:
    """Exact reverse-mode gradients for a given output cotangent.

    Returns (param_grads, input_grad). For batched inputs the parameter
    gradients are summed over rows; input_grad keeps the batch shape.
    """
    x = _check_input(net, x, "input", net.input_dim)
    g = _check_input(net, output_grad, "output_grad", net.output_dim)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if g.shape[0] != h.shape[0]:
        raise ShapeMismatchError("output_grad batch", h.shape[0], g.shape[0])

    activations = [h]  # layer inputs
    preacts = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = activations[-1] @ w.T + b
        preacts.append(z)
        act = net.output_activation if i == last else net.hidden_activation
        activations.append(_activate(act, z))

    w_grads = [None] * len(net.weights)
    b_grads = [None] * len(net.biases)
    for i in range(last, -1, -1):
        act = net.output_activation if i == last else net.hidden_activation
        gz = g * _activate_grad(act, preacts[i])
        w_grads[i] = gz.T @ activations[i]
        b_grads[i] = gz.sum(axis=0)
        g = gz @ net.weights[i]

    input_grad = g[0] if squeeze else g
    return Gradients(w_grads, b_grads), input_grad


@dataclass
class AdamState:
    """Adam moments for a fixed list of parameter arrays."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(
    params: list[np.ndarray],
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ValueError("betas must lie in (0, 1)")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    return AdamState(
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> list[np.ndarray]:
    """Standard bias-corrected Adam update, applied in place to params."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeMismatchError("parameter list", len(state.first_moment), len(params))
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step_count
    bc2 = 1.0 - b2**state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ShapeMismatchError("gradient", p.shape, g.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params


def soft_update(target: MlpNetwork, source: MlpNetwork, tau: float) -> MlpNetwork:
    """target <- tau * source + (1 - tau) * target, elementwise, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.architecture() != source.architecture():
        raise ArchitectureMismatchError(
            f"{target.architecture()} vs {source.architecture()}"
        )
    for tp, sp in zip(target.parameters(), source.parameters()):
        tp *= 1.0 - tau
        tp += tau * sp
    return target
