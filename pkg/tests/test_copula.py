import json
import math

import numpy as np
import pytest
from scipy import special, stats

from deltaflow import copula
from deltaflow.copula import TAU_GRID, CopulaCore, CopulaModel, QuantileRegressor, fit_copula, fit_quantiles
from deltaflow.errors import DimensionMismatchError, SingularDesignError, TooFewSamplesError


def normal_marginals(dims=4):
    """Regressor with no features whose knots are standard-normal quantiles."""
    coef = np.zeros((dims, TAU_GRID.size, 1))
    coef[:, :, 0] = special.ndtri(TAU_GRID)
    return QuantileRegressor(TAU_GRID.copy(), coef)


@pytest.fixture(scope="module")
def linear_fit():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((2000, 2))
    Y = np.c_[1.0 + 2.0 * X[:, 0], -X[:, 1], X[:, 0] + X[:, 1], 0.5 * X[:, 0]] + rng.standard_t(5, size=(2000, 4))
    return X, Y, fit_quantiles(X, Y)


def test_pinball_loss():
    np.testing.assert_allclose(copula.pinball_loss([2.0, -2.0], 0.25), [0.5, 1.5])


def test_identity_target_recovered(rng):
    X = rng.standard_normal((300, 3))
    reg = fit_quantiles(X, X[:, 1])
    np.testing.assert_allclose(reg.coef[0, :, 2], 1.0, rtol=1e-3)
    np.testing.assert_allclose(reg.coef[0, :, [0, 1, 3]], 0.0, atol=1e-3)


def test_median_matches_ols_under_symmetric_noise(rng):
    X = rng.standard_normal((5000, 1))
    y = 1.0 + 2.0 * X[:, 0] + rng.laplace(size=5000)
    reg = fit_quantiles(X, y, taus=[0.5])
    ols, *_ = np.linalg.lstsq(np.c_[np.ones(5000), X], y, rcond=None)
    # both unbiased; Laplace(1) noise gives variances 2/n (OLS) and 1/n (median),
    # so their difference has sd at most sqrt(3/n)
    np.testing.assert_allclose(reg.coef[0, 0], ols, atol=4 * np.sqrt(3.0 / 5000))


def test_agrees_with_statsmodels(linear_fit):
    sm = pytest.importorskip("statsmodels.api")
    X, Y, reg = linear_fit
    D = sm.add_constant(X)
    for d, tau in [(0, 0.1), (1, 0.5), (3, 0.9)]:
        k = int(np.argmin(np.abs(TAU_GRID - tau)))
        ref = sm.QuantReg(Y[:, d], D).fit(q=tau).params
        np.testing.assert_allclose(reg.coef[d, k], ref, atol=1e-3)


def test_rearranged_quantiles_monotone(linear_fit, rng):
    _, _, reg = linear_fit
    q = reg.predict(rng.standard_normal((500, 2)) * 10)
    assert np.all(np.diff(q, axis=2) >= 0)
    assert np.all(q[:, :, 0] <= q[:, :, -1])


def test_inverse_cdf_knots_and_midpoints(linear_fit):
    _, _, reg = linear_fit
    y = np.array([0.3, -1.2])
    q = reg.predict(y)[0, 2]
    assert reg.inverse_cdf(2, y, 0.5) == q[9]
    assert reg.inverse_cdf(2, y, 0.075) == pytest.approx(0.5 * (q[0] + q[1]), abs=1e-12)
    # outside the outer knots the end segments are extended
    lo = reg.inverse_cdf(2, y, 0.01)
    assert lo == pytest.approx(q[0] - 0.04 * (q[1] - q[0]) / 0.05, abs=1e-12)
    grid = np.linspace(0.001, 0.999, 400)
    assert np.all(np.diff(copula.inverse_cdf(reg, 2, y, grid)) >= 0)


def test_inverse_cdf_row_broadcasting(linear_fit, rng):
    _, _, reg = linear_fit
    Y = rng.standard_normal((5, 2))
    u = rng.uniform(size=5)
    per_row = reg.inverse_cdf(1, Y, u)
    for i in range(5):
        assert per_row[i] == pytest.approx(reg.inverse_cdf(1, Y[i], u[i]), abs=1e-12)
    assert reg.inverse_cdf(1, Y, rng.uniform(size=(5, 3))).shape == (5, 3)


def test_identity_correlation_gives_independent_ranks():
    m = CopulaModel(normal_marginals(), CopulaCore.from_corr(np.eye(4)))
    s = m.sample(np.zeros(0), 10_000, seed=1)
    rho = stats.spearmanr(s).statistic
    assert np.max(np.abs(rho[np.triu_indices(4, 1)])) < 0.05


def test_strong_correlation_spearman():
    R = np.eye(4)
    R[0, 1] = R[1, 0] = 0.9
    m = CopulaModel(normal_marginals(), CopulaCore.from_corr(R))
    s = m.sample(np.zeros(0), 10_000, seed=2)
    target = 6 / math.pi * math.asin(0.45)
    assert abs(stats.spearmanr(s[:, 0], s[:, 1]).statistic - target) < 0.05


def test_marginal_calibration(linear_fit, rng):
    X, Y, reg = linear_fit
    m = CopulaModel(reg, fit_copula(reg, X, Y))
    y = np.array([0.5, 0.5])
    s = m.sample(y, 10_000, seed=3)
    q = reg.predict(y)[0]
    k25, k75 = 4, 14
    inside = (s >= q[:, k25]) & (s <= q[:, k75])
    assert np.all(np.abs(inside.mean(axis=0) - 0.5) < 0.03)


def test_copula_on_independent_dims(rng):
    X = rng.standard_normal((10_000, 1))
    Y = rng.standard_normal((10_000, 4)) + X
    reg = fit_quantiles(X, Y, taus=[0.25, 0.5, 0.75])
    R = fit_copula(reg, X, Y).corr
    assert np.max(np.abs(R[np.triu_indices(4, 1)])) < 0.05


def test_correlation_jitter_keeps_pd():
    R = np.ones((4, 4))
    core = CopulaCore.from_corr(R)
    assert np.linalg.eigvalsh(core.corr).min() > 1e-8
    np.testing.assert_array_equal(np.diag(core.corr), 1.0)


def test_sampling_deterministic_and_empty(linear_fit):
    X, Y, reg = linear_fit
    m = copula.CopulaModel(reg, fit_copula(reg, X, Y))
    a = copula.sample(reg, m.copula, X[0], 20, seed=5)
    np.testing.assert_array_equal(a, m.sample(X[0], 20, seed=5))
    assert m.sample(X[0], 0).shape == (0, 4)
    assert m.sample_many(X[:3], 7, seed=0).shape == (3, 7, 4)


def test_fit_errors(rng):
    with pytest.raises(TooFewSamplesError):
        fit_quantiles(rng.standard_normal((29, 3)), rng.standard_normal(29))
    X = rng.standard_normal((100, 2))
    with pytest.raises(SingularDesignError):
        fit_quantiles(np.c_[X, X[:, 0] * 2], rng.standard_normal(100))
    with pytest.raises(DimensionMismatchError):
        normal_marginals().predict(np.zeros(2))


def test_json_round_trip(linear_fit, tmp_path):
    X, Y, reg = linear_fit
    m = copula.fit(X[:300], Y[:300], taus=[0.1, 0.5, 0.9])
    (tmp_path / "c.json").write_text(json.dumps(m.to_json()))
    back = CopulaModel.from_json(json.loads((tmp_path / "c.json").read_text()))
    np.testing.assert_array_equal(back.sample(X[0], 10, seed=1), m.sample(X[0], 10, seed=1))
