"""Gaussian copula over linear quantile-regression marginals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import DimensionMismatchError, ModelFormatError, SingularDesignError, TooFewSamplesError

TAU_GRID = np.round(np.arange(1, 20) * 0.05, 10)
MIN_ROWS_PER_FEATURE = 10
RESID_FLOOR = 1e-6


def pinball_loss(residual, tau: float) -> np.ndarray:
    r = np.asarray(residual, dtype=np.float64)
    return np.where(r >= 0, tau * r, (tau - 1.0) * r)


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return np.hstack([np.ones((X.shape[0], 1)), X])


def quantile_irls(D: np.ndarray, y: np.ndarray, tau: float, max_iter: int = 1000, tol: float = 1e-8) -> np.ndarray:
    """Linear quantile regression by iteratively reweighted least squares."""
    beta, *_ = np.linalg.lstsq(D, y, rcond=None)
    for _ in range(max_iter):
        r = y - D @ beta
        a = np.maximum(np.abs(r), RESID_FLOOR)
        w = np.where(r >= 0, tau, 1.0 - tau) / a
        Dw = D * w[:, None]
        new = np.linalg.solve(D.T @ Dw, Dw.T @ y)
        if np.max(np.abs(new - beta)) <= tol * (1.0 + np.max(np.abs(beta))):
            beta = new
            break
        beta = new
    return beta


def _interp_extrap(u: np.ndarray, taus: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Piecewise-linear quantile function through knots ``(taus, q[b])``, linear beyond the ends.

    ``u`` has shape (B, m), ``q`` has shape (B, K).
    """
    K = taus.size
    j = np.clip(np.searchsorted(taus, u, side="right") - 1, 0, K - 2)
    t0, t1 = taus[j], taus[j + 1]
    q0 = np.take_along_axis(q, j, axis=1)
    q1 = np.take_along_axis(q, j + 1, axis=1)
    return q0 + (u - t0) * (q1 - q0) / (t1 - t0)


@dataclass
class QuantileRegressor:
    taus: np.ndarray
    coef: np.ndarray  # (dims, taus, 1 + features)
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.coef.shape[2] - 1

    @property
    def dims(self) -> int:
        return self.coef.shape[0]

    def predict(self, X) -> np.ndarray:
        """Rearranged quantiles, shape (rows, dims, taus)."""
        D = _design(X)
        if D.shape[1] != self.coef.shape[2]:
            raise DimensionMismatchError(f"expected {self.n_features} features, got {D.shape[1] - 1}")
        q = np.einsum("bp,dkp->bdk", D, self.coef)
        return np.sort(q, axis=2)

    def inverse_cdf(self, dim: int, y, u) -> np.ndarray:
        """Conditional quantile of dimension ``dim`` at probability level(s) ``u``."""
        single_y = np.asarray(y).ndim == 1
        q = self.predict(y)[:, dim, :]
        u_arr = np.asarray(u, dtype=np.float64)
        if single_y:
            out = _interp_extrap(np.atleast_1d(u_arr)[None, :], self.taus, q)[0]
            return float(out[0]) if u_arr.ndim == 0 else out
        # one level per row, or a (rows, m) grid
        uu = u_arr.reshape(q.shape[0], -1)
        out = _interp_extrap(uu, self.taus, q)
        return out[:, 0] if u_arr.ndim == 1 else out

    def to_json(self) -> dict:
        return {"taus": self.taus.tolist(), "coef": self.coef.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "QuantileRegressor":
        return cls(np.array(obj["taus"], dtype=np.float64), np.array(obj["coef"], dtype=np.float64))


def fit_quantiles(X, Y, taus=TAU_GRID) -> QuantileRegressor:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    if n < MIN_ROWS_PER_FEATURE * max(p, 1):
        raise TooFewSamplesError(f"quantile regression needs {MIN_ROWS_PER_FEATURE}x features rows, got {n} for {p}")
    D = _design(X)
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise SingularDesignError("design matrix is rank deficient (constant or collinear features)")
    taus = np.asarray(taus, dtype=np.float64)
    coef = np.empty((Y.shape[1], taus.size, D.shape[1]))
    for d in range(Y.shape[1]):
        for k, tau in enumerate(taus):
            coef[d, k] = quantile_irls(D, Y[:, d], float(tau))
    return QuantileRegressor(taus, coef)


@dataclass
class CopulaCore:
    corr: np.ndarray
    chol: np.ndarray

    @classmethod
    def from_corr(cls, R, jitter: float = 1e-8) -> "CopulaCore":
        R = np.asarray(R, dtype=np.float64)
        R = 0.5 * (R + R.T)
        eps = 0.0
        while np.linalg.eigvalsh(R).min() <= jitter:
            eps = max(10 * eps, jitter)
            R = (R + eps * np.eye(len(R))) / (1.0 + eps)
        np.fill_diagonal(R, 1.0)
        return cls(R, np.linalg.cholesky(R))

    def to_json(self) -> dict:
        return {"corr": self.corr.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "CopulaCore":
        return cls.from_corr(obj["corr"])


def fit_copula(regressor: QuantileRegressor, X, Y) -> CopulaCore:
    """Correlation of normal scores of the ranks of residuals from the median."""
    Y = np.asarray(Y, dtype=np.float64)
    k_med = int(np.argmin(np.abs(regressor.taus - 0.5)))
    med = regressor.predict(X)[:, :, k_med]
    resid = Y - med
    n = resid.shape[0]
    u = (stats.rankdata(resid, axis=0) - 0.5) / n
    z = special.ndtri(u)
    return CopulaCore.from_corr(np.corrcoef(z, rowvar=False))


@dataclass
class CopulaModel:
    regressor: QuantileRegressor
    copula: CopulaCore
    metadata: dict = field(default_factory=dict)

    def sample_many(self, Y, n: int, seed=None) -> np.ndarray:
        """``n`` draws for every conditioning row; shape (rows, n, dims)."""
        q = self.regressor.predict(Y)  # (B, dims, K)
        B, dims, _ = q.shape
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((B, n, dims)) @ self.copula.chol.T
        u = special.ndtr(z)
        out = np.empty_like(u)
        for d in range(dims):
            out[:, :, d] = _interp_extrap(u[:, :, d], self.regressor.taus, q[:, d, :])
        return out

    def sample(self, y, n: int, seed=None) -> np.ndarray:
        if n == 0:
            return np.empty((0, self.regressor.dims))
        return self.sample_many(np.atleast_2d(y), n, seed)[0]

    def to_json(self) -> dict:
        return {
            "format": "deltaflow.copula",
            "version": 1,
            "regressor": self.regressor.to_json(),
            "copula": self.copula.to_json(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CopulaModel":
        if obj.get("format") != "deltaflow.copula" or obj.get("version") != 1:
            raise ModelFormatError("not a version-1 copula model")
        return cls(QuantileRegressor.from_json(obj["regressor"]), CopulaCore.from_json(obj["copula"]), dict(obj.get("metadata", {})))


def fit(X, Y, taus=TAU_GRID) -> CopulaModel:
    reg = fit_quantiles(X, Y, taus)
    return CopulaModel(reg, fit_copula(reg, X, Y))


def inverse_cdf(regressor: QuantileRegressor, dim: int, y, u):
    return regressor.inverse_cdf(dim, y, u)


def sample(regressor: QuantileRegressor, copula: CopulaCore, y, n: int, seed=None) -> np.ndarray:
    return CopulaModel(regressor, copula).sample(y, n, seed)
