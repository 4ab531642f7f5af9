"""Feedforward substrate: MLPs, explicit backprop, and Adam, in plain numpy.

All math is float64. Networks are plain containers of per-layer weight
matrices (out x in) and bias vectors; ``forward``/``backward`` are free
functions so callers decide exactly where gradients flow. ``backward``
returns gradients of ``<output, output_grad>`` with respect to every
parameter *and* the input, which is what lets critics expose dQ/da without
an autograd graph.

Vector arguments may be single vectors ``(d,)`` or batches ``(n, d)``;
batch parameter gradients are summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericFailureError

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass
class Mlp:
    """A multilayer perceptron.

    ``layer_dims = [d0, d1, ..., dL]`` gives L layers; ``weights[i]`` has
    shape ``(d_{i+1}, d_i)`` and ``biases[i]`` length ``d_{i+1}``. The
    hidden activation applies after every layer but the last, the output
    activation after the last.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise InvalidInputError(f"layer_dims must be >=2 positive ints, got {self.layer_dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise InvalidInputError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise InvalidInputError(f"unknown output activation {self.output_activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InvalidInputError("weights/biases count does not match layer_dims")
        for i in range(n_layers):
            w_shape = (self.layer_dims[i + 1], self.layer_dims[i])
            if self.weights[i].shape != w_shape:
                raise InvalidInputError(f"weights[{i}] has shape {self.weights[i].shape}, expected {w_shape}")
            if self.biases[i].shape != (self.layer_dims[i + 1],):
                raise InvalidInputError(f"biases[{i}] has shape {self.biases[i].shape}, expected ({self.layer_dims[i + 1]},)")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]


def mlp_init(layer_dims, rng, hidden_activation="relu", output_activation="identity") -> Mlp:
    """Create an MLP with Glorot-uniform weights drawn from ``rng``.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at
    zero. ``rng`` is a ``numpy.random.Generator`` so initialization is fully
    determined by the caller's seed.
    """
    layer_dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return Mlp(layer_dims, weights, biases, hidden_activation, output_activation)


def clone_mlp(net: Mlp) -> Mlp:
    """Deep-copy a network (used for target-network mirrors)."""
    return Mlp(
        list(net.layer_dims),
        [w.copy() for w in net.weights],
        [b.copy() for b in net.biases],
        net.hidden_activation,
        net.output_activation,
    )


def _apply_act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z  # identity


def _act_grad(name: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - out * out
    return np.ones_like(z)


def _as_batch(x, dim, what) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise InvalidInputError(f"{what} has length {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise InvalidInputError(f"{what} has width {x.shape[1]}, expected {dim}")
        return x, False
    raise InvalidInputError(f"{what} must be 1- or 2-dimensional")


def _forward_trace(net: Mlp, x: np.ndarray):
    """Forward pass keeping per-layer (input, preact, output) for backprop."""
    trace = []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        act = net.output_activation if i == last else net.hidden_activation
        out = _apply_act(act, z)
        trace.append((h, z, out, act))
        h = out
    return h, trace


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the network. Deterministic; accepts ``(d,)`` or ``(n, d)``."""
    xb, single = _as_batch(x, net.in_dim, "input")
    y, _ = _forward_trace(net, xb)
    return y[0] if single else y


def backward(net: Mlp, x, output_grad):
    """Gradients of ``<output, output_grad>`` w.r.t. parameters and input.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is a flat
    list ``[dW0, db0, dW1, db1, ...]`` and ``input_grad`` matches the shape
    of ``x``. For batched input the parameter gradients sum over the batch.
    """
    xb, single = _as_batch(x, net.in_dim, "input")
    gb, gsingle = _as_batch(output_grad, net.out_dim, "output_grad")
    if single != gsingle or xb.shape[0] != gb.shape[0]:
        raise InvalidInputError("input and output_grad batch shapes disagree")

    _, trace = _forward_trace(net, xb)
    param_grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    delta = gb
    for i in range(len(net.weights) - 1, -1, -1):
        h_in, z, out, act = trace[i]
        delta = delta * _act_grad(act, z, out)
        param_grads[2 * i] = delta.T @ h_in
        param_grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[i]
    input_grad = delta[0] if single else delta
    return param_grads, input_grad


def param_arrays(net: Mlp) -> list[np.ndarray]:
    """Parameters in the flat order used by ``backward`` and ``adam_step``."""
    out = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def zero_grads_like(net: Mlp) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in param_arrays(net)]


def add_grads(acc: list[np.ndarray], grads: list[np.ndarray], scale: float = 1.0) -> None:
    for a, g in zip(acc, grads):
        a += scale * g


@dataclass
class AdamState:
    """Adam optimizer state mirroring one network's parameters."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(net: Mlp, learning_rate=3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    params = param_arrays(net)
    return AdamState(
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        step_count=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(net: Mlp, grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``net`` and ``state``."""
    params = param_arrays(net)
    if len(grads) != len(params):
        raise InvalidInputError(f"got {len(grads)} gradient arrays for {len(params)} parameters")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise InvalidInputError(f"gradient shape {g.shape} does not mirror parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericFailureError("non-finite gradient entries in adam_step")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def finite_diff_grad(f, x, h=1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``: test oracle."""
    if h <= 0:
        raise InvalidInputError("h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xflat = x.reshape(-1)
    for i in range(xflat.size):
        orig = xflat[i]
        xflat[i] = orig + h
        fp = f(x)
        xflat[i] = orig - h
        fm = f(x)
        xflat[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return grad
