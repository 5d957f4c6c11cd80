"""Conditional RealNVP flow over the 4-D difference vector.

The forward map ``T(z, y)`` pushes standard-normal latents to data; the
inverse ``T⁻¹(x, y)`` gives exact log densities by change of variables. Each
coupling layer keeps the masked coordinates and applies an elementwise affine
map to the others, with scale and shift predicted from the kept coordinates
and the conditioning features.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDataError,
    DimensionMismatchError,
    ModelFormatError,
    NonFiniteInputError,
    TooFewSamplesError,
)
from .nn import Adam, MlpParams, backprop, flatten, init_mlp, mlp_forward, mlp_from_json, mlp_to_json

log = logging.getLogger(__name__)

DIM = 4
HIDDEN = (4, 4)
LOG_2PI = math.log(2.0 * math.pi)
MASKS = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=bool)


@dataclass
class CouplingLayer:
    mask: np.ndarray  # True = passed through unchanged
    scale_net: MlpParams
    shift_net: MlpParams
    bound: np.ndarray  # log-scale = bound * tanh(raw)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.kept = np.nonzero(self.mask)[0]
        self.moved = np.nonzero(~self.mask)[0]

    def _cond_input(self, h: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.concatenate([h[:, self.kept], y], axis=1)

    def log_scale_shift(self, h, y):
        c = self._cond_input(h, y)
        s = self.bound * np.tanh(mlp_forward(self.scale_net, c))
        t = mlp_forward(self.shift_net, c)
        return s, t

    def forward(self, z: np.ndarray, y: np.ndarray):
        s, t = self.log_scale_shift(z, y)
        x = z.copy()
        x[:, self.moved] = z[:, self.moved] * np.exp(s) + t
        return x, s.sum(axis=1)

    def inverse(self, x: np.ndarray, y: np.ndarray):
        s, t = self.log_scale_shift(x, y)
        z = x.copy()
        z[:, self.moved] = (x[:, self.moved] - t) * np.exp(-s)
        return z, -s.sum(axis=1)

    def arrays(self) -> list[np.ndarray]:
        return [*self.scale_net.arrays(), *self.shift_net.arrays(), self.bound]

    def set_arrays(self, arrays) -> None:
        ns = len(self.scale_net.arrays())
        nt = len(self.shift_net.arrays())
        self.scale_net.set_arrays(arrays[:ns])
        self.shift_net.set_arrays(arrays[ns : ns + nt])
        self.bound = arrays[ns + nt]

    def copy(self) -> "CouplingLayer":
        return CouplingLayer(self.mask.copy(), self.scale_net.copy(), self.shift_net.copy(), self.bound.copy())


@dataclass
class FlowModel:
    layers: list[CouplingLayer]
    cond_dim: int
    metadata: dict = field(default_factory=dict)

    def _prep(self, a, y):
        a = np.asarray(a, dtype=np.float64)
        single = a.ndim == 1
        a = a[None, :] if single else a
        if a.shape[1] != DIM:
            raise DimensionMismatchError(f"expected {DIM}-dimensional vectors, got {a.shape[1]}")
        y = np.zeros((0,)) if y is None else np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = np.broadcast_to(y, (a.shape[0], y.shape[0]))
        if y.shape != (a.shape[0], self.cond_dim):
            raise DimensionMismatchError(f"conditioning shape {y.shape}, expected ({a.shape[0]}, {self.cond_dim})")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
            raise NonFiniteInputError("flow input contains NaN or Inf")
        return a, y, single

    def forward(self, z, y=None):
        """Latent to data: returns ``(x, log|det J_T|)``."""
        h, y, single = self._prep(z, y)
        logdet = np.zeros(h.shape[0])
        for layer in self.layers:
            h, ld = layer.forward(h, y)
            logdet += ld
        return (h[0], logdet[0]) if single else (h, logdet)

    def inverse(self, x, y=None):
        """Data to latent: returns ``(z, log|det J_T⁻¹|)``."""
        h, y, single = self._prep(x, y)
        logdet = np.zeros(h.shape[0])
        for layer in reversed(self.layers):
            h, ld = layer.inverse(h, y)
            logdet += ld
        return (h[0], logdet[0]) if single else (h, logdet)

    def log_prob(self, x, y=None):
        z, logdet = self.inverse(x, y)
        return -0.5 * np.sum(np.square(z), axis=-1) - 0.5 * DIM * LOG_2PI + logdet

    def sample(self, y=None, n: int = 1, seed=None) -> np.ndarray:
        """``n`` draws for one conditioning vector ``y``."""
        if n == 0:
            return np.empty((0, DIM))
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, DIM))
        if y is not None:
            y = np.broadcast_to(np.asarray(y, dtype=np.float64), (n, self.cond_dim))
        x, _ = self.forward(z, y)
        return x

    def sample_many(self, Y, n: int, seed=None) -> np.ndarray:
        """``n`` draws for every row of ``Y``; shape ``(len(Y), n, 4)``."""
        Y = np.asarray(Y, dtype=np.float64).reshape(-1, self.cond_dim)
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((len(Y) * n, DIM))
        x, _ = self.forward(z, np.repeat(Y, n, axis=0))
        return x.reshape(len(Y), n, DIM)

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer.arrays()]

    def set_arrays(self, arrays) -> None:
        k = 0
        for layer in self.layers:
            n = len(layer.arrays())
            layer.set_arrays(arrays[k : k + n])
            k += n

    def copy(self) -> "FlowModel":
        return FlowModel([l.copy() for l in self.layers], self.cond_dim, dict(self.metadata))

    # ------------------------------------------------------------------ #

    def to_json(self) -> dict:
        return {
            "format": "deltaflow.flow",
            "version": 1,
            "dim": DIM,
            "n_layers": len(self.layers),
            "cond_dim": self.cond_dim,
            "masks": [l.mask.astype(int).tolist() for l in self.layers],
            "layers": [
                {"scale_net": mlp_to_json(l.scale_net), "shift_net": mlp_to_json(l.shift_net), "bound": l.bound.tolist()}
                for l in self.layers
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FlowModel":
        if obj.get("format") != "deltaflow.flow" or obj.get("version") != 1:
            raise ModelFormatError("not a version-1 flow model")
        layers = [
            CouplingLayer(
                np.array(mask, dtype=bool),
                mlp_from_json(rec["scale_net"]),
                mlp_from_json(rec["shift_net"]),
                np.array(rec["bound"], dtype=np.float64),
            )
            for mask, rec in zip(obj["masks"], obj["layers"])
        ]
        return cls(layers, int(obj["cond_dim"]), dict(obj.get("metadata", {})))


def init_flow(cond_dim: int, seed=None, identity: bool = False, bound: float = 1.0) -> FlowModel:
    """Four coupling layers with alternating masks and 2x4 ReLU conditioners.

    Hidden weights are Glorot-uniform; the conditioner output layers start at
    zero so the untrained flow is the identity map. ``identity=True`` also
    zeroes the hidden weights.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for mask in MASKS:
        n_in = int(mask.sum()) + cond_dim
        n_out = int((~mask).sum())
        sizes = (n_in, *HIDDEN, n_out)
        acts = ("relu", "relu", "identity")
        nets = []
        for _ in range(2):
            net = init_mlp(sizes, acts, rng=rng, zero_last=True)
            if identity:
                for l in net.layers:
                    l.weight[:] = 0.0
            net.seed = seed
            nets.append(net)
        layers.append(CouplingLayer(mask.copy(), nets[0], nets[1], np.full(n_out, float(bound))))
    return FlowModel(layers, cond_dim, {"seed": seed})


def nll_and_grad(model: FlowModel, x: np.ndarray, y: np.ndarray):
    """Mean negative log-likelihood of a batch and its gradient for every array."""
    B = x.shape[0]
    h = x
    records = []
    for layer in reversed(model.layers):
        c = layer._cond_input(h, y)
        r, tape_s = mlp_forward(layer.scale_net, c, record=True)
        t, tape_t = mlp_forward(layer.shift_net, c, record=True)
        th = np.tanh(r)
        s = layer.bound * th
        out = h.copy()
        moved = (h[:, layer.moved] - t) * np.exp(-s)
        out[:, layer.moved] = moved
        records.append((layer, tape_s, tape_t, th, s, moved))
        h = out
    z = h
    sum_s = sum(rec[4].sum() for rec in records)
    loss = (0.5 * np.sum(z * z) + sum_s) / B + 0.5 * DIM * LOG_2PI

    g = z / B
    grads_by_layer = {}
    for layer, tape_s, tape_t, th, s, moved in reversed(records):
        e = np.exp(-s)
        g_moved = g[:, layer.moved]
        g_t = -g_moved * e
        g_s = -g_moved * moved + 1.0 / B
        g_bound = np.sum(g_s * th, axis=0)
        g_r = g_s * layer.bound * (1.0 - th * th)
        grads_s, gc_s = backprop(tape_s, g_r)
        grads_t, gc_t = backprop(tape_t, g_t)
        nk = layer.kept.size
        g_new = g.copy()
        g_new[:, layer.moved] = g_moved * e
        g_new[:, layer.kept] += gc_s[:, :nk] + gc_t[:, :nk]
        g = g_new
        grads_by_layer[id(layer)] = [*grads_s, *grads_t, g_bound]
    grads = [a for layer in model.layers for a in grads_by_layer[id(layer)]]
    return float(loss), grads


def fit(
    x,
    y=None,
    epochs: int = 500,
    batch: int = 128,
    seed=0,
    lr: float = 1e-3,
    model: FlowModel | None = None,
) -> FlowModel:
    """Maximum-likelihood training with Adam; the loss trace lands in ``metadata``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    y = np.zeros((n, 0)) if y is None else np.asarray(y, dtype=np.float64).reshape(n, -1)
    if n < batch:
        raise TooFewSamplesError(f"need at least one batch ({batch}) of training pairs, got {n}")
    if np.any(x.std(axis=0) == 0):
        raise DegenerateDataError("a target dimension has zero variance")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteInputError("training data contains NaN or Inf")
    rng = np.random.default_rng(seed)
    model = init_flow(y.shape[1], seed=int(rng.integers(2**31))) if model is None else model.copy()
    theta, views = flatten(model.arrays())
    model.set_arrays(views)
    opt = Adam(theta, lr=lr)

    initial = -float(np.mean(model.log_prob(x, y)))
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads = nll_and_grad(model, x[idx], y[idx])
            opt.step(np.concatenate([g.ravel() for g in grads]))
            total += loss * idx.size
        trace.append(total / n)
        if epoch % 100 == 0:
            log.debug("flow epoch %d nll %.4f", epoch, trace[-1])
    final = -float(np.mean(model.log_prob(x, y)))
    trained = model.copy()
    trained.metadata.update(
        {"seed": seed, "epochs": epochs, "batch": batch, "lr": lr, "initial_nll": initial, "final_nll": final, "loss_trace": trace}
    )
    return trained


def log_prob(model: FlowModel, x, y=None):
    return model.log_prob(x, y)


def sample(model: FlowModel, y=None, n: int = 1, seed=None) -> np.ndarray:
    return model.sample(y, n, seed)
