import json

import numpy as np
import pytest
from scipy import stats

from deltaflow.errors import EmptyBucketError
from deltaflow.historical import HistoricalModel, HistoryIndex, build_index, sample_multivariate, sample_univariate


def _index(vectors, hour=5):
    v = np.asarray(vectors, dtype=float)
    return build_index(np.full(len(v), hour), v)


@pytest.mark.parametrize("draw", [sample_multivariate, sample_univariate])
def test_single_vector_bucket(draw):
    idx = _index([[1.0, -2.0, 3.0, 0.5]])
    s = draw(idx, 5, 50, seed=0)
    assert s.shape == (50, 4)
    assert np.all(s == [1.0, -2.0, 3.0, 0.5])


@pytest.mark.parametrize("draw", [sample_multivariate, sample_univariate])
def test_deterministic(draw, rng):
    idx = _index(rng.standard_normal((30, 4)))
    np.testing.assert_array_equal(draw(idx, 5, 20, seed=1), draw(idx, 5, 20, seed=1))


def test_sample_mean_converges(rng):
    b = rng.standard_normal((40, 4)) * [1, 2, 3, 4]
    idx = _index(b)
    n = 20_000
    s = sample_multivariate(idx, 5, n, seed=2)
    assert np.all(np.abs(s.mean(axis=0) - b.mean(axis=0)) < 3 * b.std(axis=0) / np.sqrt(n))


def test_antipodal_bucket_correlations():
    v = np.array([1.0, -2.0, 0.5, 3.0])
    idx = _index([v, -v])
    multi = sample_multivariate(idx, 5, 10_000, seed=3)
    uni = sample_univariate(idx, 5, 10_000, seed=3)
    c_multi = np.corrcoef(multi.T)
    c_uni = np.corrcoef(uni.T)
    np.testing.assert_allclose(c_multi, np.sign(np.outer(v, v)), atol=1e-12)
    assert np.max(np.abs(c_uni[np.triu_indices(4, 1)])) < 0.05


def test_marginals_agree_between_variants(rng):
    idx = _index(rng.standard_t(4, size=(200, 4)))
    multi = sample_multivariate(idx, 5, 10_000, seed=4)
    uni = sample_univariate(idx, 5, 10_000, seed=5)
    for d in range(4):
        assert stats.ks_2samp(multi[:, d], uni[:, d]).pvalue > 0.01


def test_buckets_partition_training_set(small_ds):
    from deltaflow.dataset import build_delta_series

    d = build_delta_series(small_ds).values
    idx = build_index(small_ds.hour_of_day, d)
    assert idx.size == len(d)
    assert sorted(idx.buckets) == list(range(24))
    for h, b in idx.buckets.items():
        np.testing.assert_array_equal(b, d[small_ds.hour_of_day == h])


def test_empty_bucket():
    idx = _index(np.ones((3, 4)), hour=2)
    with pytest.raises(EmptyBucketError):
        sample_multivariate(idx, 3, 10)
    with pytest.raises(EmptyBucketError):
        HistoricalModel(idx, "uni").sample_hours([2, 7], 4, seed=0)


def test_model_sampling_and_json(rng, tmp_path):
    hod = np.tile(np.arange(24), 5)
    idx = build_index(hod, rng.standard_normal((120, 4)))
    m = HistoricalModel(idx, "uni")
    s = m.sample_hours([0, 5, 23], 10, seed=1)
    assert s.shape == (3, 10, 4)
    (tmp_path / "h.json").write_text(json.dumps(m.to_json()))
    back = HistoricalModel.from_json(json.loads((tmp_path / "h.json").read_text()))
    np.testing.assert_array_equal(back.sample_hours([0, 5, 23], 10, seed=1), s)
    assert HistoryIndex.from_json(idx.to_json()).size == 120
    with pytest.raises(ValueError):
        HistoricalModel(idx, "both")
