"""Small dense networks with hand-written reverse-mode gradients and Adam."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DimensionMismatchError, ModelFormatError, TapeMismatchError

ACTIVATIONS = ("tanh", "relu", "softplus", "identity")
FORMAT_VERSION = 1


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation given pre-activation ``z`` and output ``a``."""
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "softplus":
        return special.expit(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


@dataclass
class MlpParams:
    layers: list[Dense]
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise DimensionMismatchError(f"layer {i}: bias shape {layer.bias.shape} vs weight {layer.weight.shape}")
            if i and layer.weight.shape[1] != self.layers[i - 1].weight.shape[0]:
                raise DimensionMismatchError(f"layer {i} input {layer.weight.shape[1]} != previous output")
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def set_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        """Rebind parameters (e.g. to views into a flat vector)."""
        for k, layer in enumerate(self.layers):
            layer.weight, layer.bias = arrays[2 * k], arrays[2 * k + 1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Dense(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.seed,
            dict(self.metadata),
        )

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(
    sizes: Sequence[int],
    activations: Sequence[str],
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    zero_last: bool = False,
) -> MlpParams:
    """Glorot-uniform weights and zero biases; ``sizes`` includes input and output."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed) if rng is None else rng
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = math.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        if zero_last and k == len(sizes) - 2:
            w = np.zeros_like(w)
        layers.append(Dense(w, np.zeros(n_out), activations[k]))
    return MlpParams(layers, seed)


@dataclass
class GradientTape:
    """Primal values of one batched forward pass."""

    params: MlpParams
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]
    outputs: list[np.ndarray]
    shapes: tuple


def mlp_forward(params: MlpParams, x, record: bool = False):
    """Evaluate the network on a vector or a batch of row vectors.

    With ``record=True`` returns ``(output, tape)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != params.in_dim:
        raise DimensionMismatchError(f"input has {h.shape[-1]} features, network expects {params.in_dim}")
    inputs, preacts, outputs = [], [], []
    for layer in params.layers:
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        h = activate(layer.activation, z)
        preacts.append(z)
        outputs.append(h)
    out = h[0] if single else h
    if not record:
        return out
    shapes = tuple(l.weight.shape for l in params.layers)
    return out, GradientTape(params, inputs, preacts, outputs, shapes)


def backprop(tape: GradientTape, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse pass; returns ``([dW0, db0, dW1, ...], d_input)`` summed over the batch."""
    params = tape.params
    if tuple(l.weight.shape for l in params.layers) != tape.shapes:
        raise TapeMismatchError("network shapes changed since the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise TapeMismatchError(f"gradient shape {g.shape} does not match output {tape.outputs[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(params.layers))  # type: ignore[list-item]
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        gz = g * activation_grad(layer.activation, tape.preacts[k], tape.outputs[k])
        grads[2 * k] = gz.T @ tape.inputs[k]
        grads[2 * k + 1] = gz.sum(axis=0)
        g = gz @ layer.weight
    d_input = g[0] if np.asarray(grad_out).ndim == 1 else g
    return grads, d_input


# --------------------------------------------------------------------------- #
# flat parameter vectors


def flatten(arrays: Sequence[np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Copy ``arrays`` into one vector and return it with reshaped views into it."""
    theta = np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.empty(0)
    return theta, unflatten(theta, [np.shape(a) for a in arrays])


def unflatten(theta: np.ndarray, shapes: Sequence[tuple]) -> list[np.ndarray]:
    views, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        views.append(theta[offset : offset + size].reshape(shape))
        offset += size
    if offset != theta.size:
        raise DimensionMismatchError("flat vector size does not match shapes")
    return views


# --------------------------------------------------------------------------- #
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update; inputs are left untouched."""
    if len(arrays) != len(grads) or any(np.shape(a) != np.shape(g) for a, g in zip(arrays, grads)):
        raise DimensionMismatchError("parameter and gradient shapes differ")
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


class Adam:
    """In-place Adam on a flat parameter vector; the fast path for training loops."""

    def __init__(self, theta: np.ndarray, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.theta = theta
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros_like(theta)
        self.v = np.zeros_like(theta)
        self.t = 0

    def step(self, grad: np.ndarray) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * grad * grad
        step = self.lr / (1.0 - b1**self.t)
        denom = np.sqrt(self.v / (1.0 - b2**self.t))
        denom += self.eps
        self.theta -= step * self.m / denom


# --------------------------------------------------------------------------- #
# serialization


def mlp_to_json(params: MlpParams) -> dict:
    return {
        "format": "deltaflow.mlp",
        "version": FORMAT_VERSION,
        "seed": params.seed,
        "metadata": params.metadata,
        "layers": [
            {
                "in": int(l.weight.shape[1]),
                "out": int(l.weight.shape[0]),
                "activation": l.activation,
                "weight": l.weight.ravel().tolist(),
                "bias": l.bias.tolist(),
            }
            for l in params.layers
        ],
    }


def mlp_from_json(obj: dict) -> MlpParams:
    if obj.get("format") != "deltaflow.mlp":
        raise ModelFormatError(f"not an MLP record: {obj.get('format')!r}")
    if obj.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported MLP format version {obj.get('version')!r}")
    layers = [
        Dense(
            np.array(l["weight"], dtype=np.float64).reshape(l["out"], l["in"]),
            np.array(l["bias"], dtype=np.float64),
            l["activation"],
        )
        for l in obj["layers"]
    ]
    return MlpParams(layers, obj.get("seed"), dict(obj.get("metadata", {})))


def dump_json(obj, path) -> None:
    """Deterministic JSON: sorted keys, shortest round-trip float repr."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, allow_nan=False) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
