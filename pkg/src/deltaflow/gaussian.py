"""Multivariate Gaussian regression with a network-predicted Cholesky factor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DegenerateDataError, DimensionMismatchError, ModelFormatError, NonFiniteInputError, TooFewSamplesError
from .nn import Adam, MlpParams, backprop, flatten, init_mlp, mlp_forward, mlp_from_json, mlp_to_json

DIM = 4
HIDDEN = 32
N_OUT = 14  # 4 means, 4 diagonal and 6 strictly-lower entries of L
DIAG_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)
TRIL = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]
_TRIL_R = np.array([i for i, _ in TRIL])
_TRIL_C = np.array([j for _, j in TRIL])
_DIAG = np.arange(DIM)


@dataclass
class GaussianHead:
    net: MlpParams
    cond_dim: int
    metadata: dict = field(default_factory=dict)

    def _outputs(self, y, record=False):
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[None, :]
        if y.shape[1] != self.cond_dim:
            raise DimensionMismatchError(f"expected {self.cond_dim} features, got {y.shape[1]}")
        if not np.all(np.isfinite(y)):
            raise NonFiniteInputError("features contain NaN or Inf")
        return mlp_forward(self.net, y, record=record)

    def predict_moments(self, y):
        single = np.asarray(y).ndim == 1
        mean, L = _moments(self._outputs(y))
        return (mean[0], L[0]) if single else (mean, L)

    def nll(self, x, y):
        single = np.asarray(x).ndim == 1
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mean, L = _moments(self._outputs(y))
        out = _gaussian_nll(x, mean, L)[0]
        return float(out[0]) if single else out

    def sample(self, y, n: int, seed=None) -> np.ndarray:
        if n == 0:
            return np.empty((0, DIM))
        mean, L = self.predict_moments(np.asarray(y, dtype=np.float64))
        z = np.random.default_rng(seed).standard_normal((n, DIM))
        return mean + z @ L.T

    def sample_many(self, Y, n: int, seed=None) -> np.ndarray:
        mean, L = self.predict_moments(np.atleast_2d(np.asarray(Y, dtype=np.float64)))
        z = np.random.default_rng(seed).standard_normal((len(mean), n, DIM))
        return mean[:, None, :] + np.einsum("hij,hnj->hni", L, z)

    def to_json(self) -> dict:
        return {
            "format": "deltaflow.gaussian",
            "version": 1,
            "cond_dim": self.cond_dim,
            "outputs": {"mean": 4, "diag": 4, "offdiag": 6, "diag_transform": "softplus", "diag_floor": DIAG_FLOOR},
            "net": mlp_to_json(self.net),
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GaussianHead":
        if obj.get("format") != "deltaflow.gaussian" or obj.get("version") != 1:
            raise ModelFormatError("not a version-1 Gaussian head")
        return cls(mlp_from_json(obj["net"]), int(obj["cond_dim"]), dict(obj.get("metadata", {})))


def _moments(out: np.ndarray):
    B = out.shape[0]
    mean = out[:, :DIM]
    L = np.zeros((B, DIM, DIM))
    L[:, _DIAG, _DIAG] = np.logaddexp(0.0, out[:, DIM : 2 * DIM]) + DIAG_FLOOR
    L[:, _TRIL_R, _TRIL_C] = out[:, 2 * DIM :]
    return mean, L


def _solve_lower(L, r):
    z = np.empty_like(r)
    for i in range(DIM):
        z[:, i] = (r[:, i] - np.einsum("bj,bj->b", L[:, i, :i], z[:, :i])) / L[:, i, i]
    return z


def _solve_upper_t(L, z):
    """Solve ``Lᵀ w = z`` for lower-triangular ``L``."""
    w = np.empty_like(z)
    for i in range(DIM - 1, -1, -1):
        w[:, i] = (z[:, i] - np.einsum("bj,bj->b", L[:, i + 1 :, i], w[:, i + 1 :])) / L[:, i, i]
    return w


def _gaussian_nll(x, mean, L):
    """Per-row NLL, plus the latent ``z = L⁻¹(x - mean)``."""
    z = _solve_lower(L, x - mean)
    logdet = np.sum(np.log(L[:, _DIAG, _DIAG]), axis=1)
    return 0.5 * np.sum(z * z, axis=1) + logdet + 0.5 * DIM * LOG_2PI, z


def init_head(cond_dim: int, seed=None) -> GaussianHead:
    net = init_mlp((cond_dim, HIDDEN, N_OUT), ("tanh", "identity"), seed=seed)
    return GaussianHead(net, cond_dim, {"seed": seed})


def nll_and_grad(head: GaussianHead, x: np.ndarray, y: np.ndarray):
    B = x.shape[0]
    out, tape = mlp_forward(head.net, y, record=True)
    mean, L = _moments(out)
    per_row, z = _gaussian_nll(x, mean, L)
    w = _solve_upper_t(L, z)
    g = np.empty_like(out)
    g[:, :DIM] = -w
    diag = L[:, _DIAG, _DIAG]
    g_diag = -w * z + 1.0 / diag
    g[:, DIM : 2 * DIM] = g_diag * special.expit(out[:, DIM : 2 * DIM])
    g[:, 2 * DIM :] = -w[:, _TRIL_R] * z[:, _TRIL_C]
    grads, _ = backprop(tape, g / B)
    return float(per_row.mean()), grads


def fit(x, y=None, epochs: int = 500, batch: int = 128, seed=0, lr: float = 1e-3) -> GaussianHead:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    y = np.zeros((n, 0)) if y is None else np.asarray(y, dtype=np.float64).reshape(n, -1)
    if n < batch:
        raise TooFewSamplesError(f"need at least one batch ({batch}) of training pairs, got {n}")
    if np.any(x.std(axis=0) == 0):
        raise DegenerateDataError("a target dimension has zero variance")
    rng = np.random.default_rng(seed)
    head = init_head(y.shape[1], seed=int(rng.integers(2**31)))
    theta, views = flatten(head.net.arrays())
    head.net.set_arrays(views)
    opt = Adam(theta, lr=lr)
    initial = float(np.mean(head.nll(x, y)))
    trace = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads = nll_and_grad(head, x[idx], y[idx])
            opt.step(np.concatenate([g.ravel() for g in grads]))
            total += loss * idx.size
        trace.append(total / n)
    final = float(np.mean(head.nll(x, y)))
    trained = GaussianHead(head.net.copy(), head.cond_dim, dict(head.metadata))
    trained.metadata.update(
        {"seed": seed, "epochs": epochs, "batch": batch, "lr": lr, "initial_nll": initial, "final_nll": final, "loss_trace": trace}
    )
    return trained


def predict_moments(head: GaussianHead, y):
    return head.predict_moments(y)


def nll(head: GaussianHead, x, y):
    return head.nll(x, y)


def sample(head: GaussianHead, y, n: int, seed=None) -> np.ndarray:
    return head.sample(y, n, seed)
