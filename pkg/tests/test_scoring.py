import itertools

import numpy as np
import pytest

from deltaflow.errors import HourMismatchError, InvalidAlphaError, InvalidIntervalError, TooFewSamplesError
from deltaflow.scoring import (
    DensityForecast,
    box_stats,
    coverage_table,
    energy_score,
    interval_bounds,
    pi_coverage,
    read_forecasts,
    score_forecasts,
    variogram_score,
    winkler_score,
    write_forecasts,
)

from oracles import energy_score_loops, variogram_score_loops


def random_instance(rng):
    n = int(rng.integers(2, 30))
    scale = 10 ** rng.uniform(-1, 2)
    return rng.standard_normal((n, 4)) * scale, rng.standard_normal(4) * scale


def test_scores_match_brute_force(rng):
    for _ in range(100):
        s, x = random_instance(rng)
        assert abs(energy_score(s, x) - energy_score_loops(s, x)) < 1e-10 * max(1.0, abs(energy_score_loops(s, x)))
        for variant, printed in (("printed", True), ("original", False)):
            ref = variogram_score_loops(s, x, 0.5, printed)
            assert abs(variogram_score(s, x, 0.5, variant) - ref) < 1e-10 * max(1.0, ref)


def test_energy_closed_forms():
    r = np.zeros(4)
    s = np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]])
    assert energy_score(s, r) == 0.5
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert energy_score(np.tile(x, (5, 1)), x) == 0.0
    with pytest.raises(TooFewSamplesError):
        energy_score(x[None, :], x)


def test_variogram_closed_forms():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert variogram_score(np.tile(x, (5, 1)), x) == 0.0
    assert variogram_score(np.ones((1, 4)), np.zeros(4)) == 0.0
    # gamma = 1, x = (0,1,0,1), one sample at 0: eight ordered pairs differ by 1
    assert variogram_score(np.zeros((1, 4)), np.array([0.0, 1, 0, 1]), gamma=1.0) == 8.0
    assert variogram_score_loops(np.zeros((1, 4)), [0.0, 1, 0, 1], gamma=1.0) == 8.0
    with pytest.raises(ValueError):
        variogram_score(np.zeros((2, 4)), np.zeros(4), variant="other")


def test_translation_and_permutation_invariance(rng):
    s, x = random_instance(rng)
    shift = rng.standard_normal(4) * 50
    assert energy_score(s + shift, x + shift) == pytest.approx(energy_score(s, x), abs=1e-12 * 100)
    c = rng.normal()
    assert variogram_score(s + c, x + c) == pytest.approx(variogram_score(s, x), rel=1e-12, abs=1e-12)
    perm = rng.permutation(len(s))
    assert energy_score(s[perm], x) == pytest.approx(energy_score(s, x), rel=1e-14)
    assert variogram_score(s[perm], x) == pytest.approx(variogram_score(s, x), rel=1e-14)
    lo, hi = interval_bounds(s[perm], 0.5)
    np.testing.assert_array_equal((lo, hi), interval_bounds(s, 0.5))


def test_winkler_cases():
    assert winkler_score(0.0, 1.0, 0.5, 0.5) == 1.0
    assert winkler_score(0.0, 1.0, 2.0, 0.5) == 5.0
    assert winkler_score(0.0, 1.0, -1.0, 0.5) == 5.0
    assert winkler_score(-1.0, 3.0, 0.5, 0.9) - winkler_score(0.0, 1.0, 0.5, 0.9) == 3.0
    assert winkler_score(0.0, 1.0, 1.0, 0.9) == 1.0
    with pytest.raises(InvalidIntervalError):
        winkler_score(1.0, 0.0, 0.5, 0.5)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(InvalidAlphaError):
            winkler_score(0.0, 1.0, 0.5, bad)


def test_interval_bounds_type7():
    s = np.arange(11.0)[:, None].repeat(4, axis=1)
    lo, hi = interval_bounds(s, 0.9)
    np.testing.assert_allclose(lo, 0.5)
    np.testing.assert_allclose(hi, 9.5)


def _forecasts(samples, hours=None, model="m"):
    return [DensityForecast(hours[i] if hours else f"h{i}", model, s, 0) for i, s in enumerate(samples)]


def test_coverage_of_point_mass_forecast(rng):
    x = rng.standard_normal((10, 4))
    fc = _forecasts([np.tile(v, (20, 1)) for v in x])
    for level in (0.5, 0.9):
        c = pi_coverage(fc, x, level)
        assert c.overall == 1.0
        assert c.per_quarter == (1.0,) * 4


def test_coverage_of_well_specified_model(rng):
    H = 1000
    x = rng.standard_normal((H, 4))
    fc = _forecasts(rng.standard_normal((H, 100, 4)))
    for level in (0.5, 0.9):
        c = pi_coverage(fc, x, level)
        assert abs(c.overall - level) < 0.05


def test_hour_mismatch(rng):
    fc = _forecasts(rng.standard_normal((3, 5, 4)), hours=["a", "b", "c"])
    with pytest.raises(HourMismatchError):
        pi_coverage(fc, np.zeros((2, 4)), 0.5)
    with pytest.raises(HourMismatchError):
        pi_coverage(fc, np.zeros((3, 4)), 0.5, hours=["a", "b", "x"])
    with pytest.raises(HourMismatchError):
        score_forecasts([], np.zeros((0, 4)))


def test_true_sampler_minimizes_expected_energy_score():
    # truth: equal mass on two points; expected ES over the truth in closed form
    a, b = np.array([1.0, 0, 0, 0]), np.array([-1.0, 0, 0, 0])
    truth = [a, b]

    def expected(samples):
        return np.mean([energy_score(samples, t) for t in truth])

    ideal = np.array([a, b] * 10)
    base = expected(ideal)
    family = [np.array([a] * 20), np.array([a * 0.5, b * 0.5] * 10), np.array([a * 2, b * 2] * 10)]
    family += [np.array([a] * k + [b] * (20 - k)) for k in (2, 6, 14, 18)]
    family.append(np.array([a + [0, 1, 0, 0], b + [0, 1, 0, 0]] * 10))
    for s in family:
        assert base <= expected(s) + 1e-12


def test_score_report_outputs(rng, tmp_path):
    x = rng.standard_normal((6, 4))
    fc = _forecasts(rng.standard_normal((6, 50, 4)))
    rep = score_forecasts(fc, x, alphas=(0.5, 0.9))
    assert rep.energy.shape == (6,)
    assert np.all(rep.variogram >= 0) and np.all(rep.energy >= 0)
    rep.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "hour,model,energy_score,variogram_score,winkler_0.5,winkler_0.9"
    assert len(lines) == 7
    summary = rep.summary()
    assert summary["energy_score"]["median"] == pytest.approx(np.median(rep.energy))
    tab = coverage_table([rep])
    assert tab[0] == ["model", "level", "overall", "q00", "q15", "q30", "q45"]
    assert [r[1] for r in tab[1:]] == ["0.5", "0.9"]


def test_forecast_file_round_trip(rng, tmp_path):
    fc = _forecasts(rng.standard_normal((3, 4, 4)), hours=["2019-01-01T00:00:00Z", "2019-01-01T01:00:00Z", "2019-01-01T02:00:00Z"])
    write_forecasts(fc, tmp_path / "f.csv")
    back = read_forecasts(tmp_path / "f.csv")
    assert [f.hour for f in back] == [f.hour for f in fc]
    for a, b in zip(fc, back):
        np.testing.assert_array_equal(a.samples, b.samples)


def test_box_stats():
    v = np.r_[np.arange(1.0, 11.0), 100.0]
    b = box_stats(v)
    assert b["median"] == 6.0
    assert b["outliers"] == [100.0]
    assert b["whisker_high"] == 10.0
    assert b["max"] == 100.0
    assert box_stats(np.ones(4))["outliers"] == []


def test_brute_force_ordered_pairs_include_diagonal():
    # with all samples distinct the s = s' terms contribute 0 but count in N^2
    s = np.array([[0.0, 0, 0, 0], [3.0, 4.0, 0, 0]])
    pairs = sum(np.linalg.norm(p - q) for p, q in itertools.product(s, s))
    assert energy_score(s, np.zeros(4)) == pytest.approx(5.0 / 2 - pairs / 8)
