"""Scoring rules and interval diagnostics for sampled 4-D density forecasts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import HourMismatchError, InvalidAlphaError, InvalidIntervalError, TooFewSamplesError

QUARTERS = ("00", "15", "30", "45")
DEFAULT_ALPHAS = (0.5, 0.9)
VS_VARIANTS = ("printed", "original")


def _pairwise_norms(a: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - a[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def energy_score(samples, realization) -> float:
    """Sample energy score; the pairwise term runs over all ordered pairs, including s = s'."""
    s = np.asarray(samples, dtype=np.float64)
    x = np.asarray(realization, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 2:
        raise TooFewSamplesError("energy score needs at least 2 samples")
    n = s.shape[0]
    first = np.linalg.norm(s - x, axis=1).sum() / n
    second = _pairwise_norms(s).sum() / (2.0 * n * n)
    return float(first - second)


def variogram_score(samples, realization, gamma: float = 0.5, variant: str = "printed") -> float:
    """Variogram score of order ``gamma`` over all ordered dimension pairs.

    ``variant="printed"`` scales the double sum by 1/N; ``"original"`` omits that factor.
    """
    if variant not in VS_VARIANTS:
        raise ValueError(f"unknown variogram variant {variant!r}")
    s = np.asarray(samples, dtype=np.float64)
    x = np.asarray(realization, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1:
        raise TooFewSamplesError("variogram score needs at least 1 sample")
    n = s.shape[0]
    obs = np.abs(x[:, None] - x[None, :]) ** gamma
    pred = (np.abs(s[:, :, None] - s[:, None, :]) ** gamma).mean(axis=0)
    total = float(np.sum((obs - pred) ** 2))
    return total / n if variant == "printed" else total


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidAlphaError(f"alpha must lie in (0, 1), got {alpha}")


def winkler_score(lower, upper, x, alpha: float):
    """Interval width plus 2/(1-alpha) times the distance to the violated bound."""
    _check_alpha(alpha)
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    xv = np.asarray(x, dtype=np.float64)
    if np.any(lo > hi):
        raise InvalidIntervalError("lower bound exceeds upper bound")
    k = 2.0 / (1.0 - alpha)
    out = (hi - lo) + k * np.maximum(xv - hi, 0.0) + k * np.maximum(lo - xv, 0.0)
    return float(out) if out.ndim == 0 else out


def interval_bounds(samples, level: float):
    """Central interval from type-7 sample quantiles at (1 -/+ level)/2, per dimension."""
    _check_alpha(level)
    s = np.asarray(samples, dtype=np.float64)
    q = np.quantile(s, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=-2, method="linear")
    return q[0], q[1]


@dataclass(frozen=True)
class DensityForecast:
    hour: str
    model: str
    samples: np.ndarray  # (N, 4) in EUR/MWh
    seed: int | None = None


@dataclass(frozen=True)
class Coverage:
    level: float
    overall: float
    per_quarter: tuple[float, ...]


def _stack(forecasts: Sequence[DensityForecast], realizations, hours=None):
    if not forecasts:
        raise HourMismatchError("no forecasts supplied")
    real = np.asarray(realizations, dtype=np.float64)
    if real.shape[0] != len(forecasts):
        raise HourMismatchError(f"{len(forecasts)} forecasts vs {real.shape[0]} realizations")
    if hours is not None:
        mismatch = [f.hour for f, h in zip(forecasts, hours) if f.hour != h]
        if mismatch:
            raise HourMismatchError(f"forecast hour {mismatch[0]} has no matching realization")
    return np.stack([f.samples for f in forecasts]), real


def pi_coverage(forecasts: Sequence[DensityForecast], realizations, level: float, hours=None) -> Coverage:
    """Share of 15-min realizations inside the central ``level`` interval (bounds inclusive)."""
    s, real = _stack(forecasts, realizations, hours)
    lo, hi = interval_bounds(s, level)
    inside = (real >= lo) & (real <= hi)
    return Coverage(level, float(inside.mean()), tuple(float(v) for v in inside.mean(axis=0)))


def box_stats(values) -> dict:
    """Box-plot summary with 1.5 IQR whiskers."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {
        "min": float(v[0]),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(v[-1]),
        "whisker_low": float(inside[0]),
        "whisker_high": float(inside[-1]),
        "outliers": [float(x) for x in v[(v < inside[0]) | (v > inside[-1])]],
    }


@dataclass
class ScoreReport:
    model: str
    hours: list[str]
    energy: np.ndarray
    variogram: np.ndarray
    winkler: dict[float, np.ndarray]
    coverage: list[Coverage] = field(default_factory=list)
    gamma: float = 0.5
    vs_variant: str = "printed"

    def summary(self) -> dict:
        def dist(v):
            q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
            return {"mean": float(np.mean(v)), "median": float(med), "q1": float(q1), "q3": float(q3)}

        return {
            "model": self.model,
            "hours": len(self.hours),
            "gamma": self.gamma,
            "vs_variant": self.vs_variant,
            "energy_score": dist(self.energy),
            "variogram_score": dist(self.variogram),
            "winkler_score": {repr(a): dist(v) for a, v in sorted(self.winkler.items())},
            "coverage": [
                {"level": c.level, "overall": c.overall, "per_quarter": dict(zip(QUARTERS, c.per_quarter))} for c in self.coverage
            ],
        }

    def write_csv(self, path) -> None:
        alphas = sorted(self.winkler)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour", "model", "energy_score", "variogram_score"] + [f"winkler_{a!r}" for a in alphas])
            for i, h in enumerate(self.hours):
                w.writerow([h, self.model, repr(float(self.energy[i])), repr(float(self.variogram[i]))] + [repr(float(self.winkler[a][i])) for a in alphas])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), sort_keys=True, indent=2) + "\n")


def score_forecasts(
    forecasts: Sequence[DensityForecast],
    realizations,
    gamma: float = 0.5,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    vs_variant: str = "printed",
    levels: Sequence[float] = DEFAULT_ALPHAS,
    hours=None,
) -> ScoreReport:
    s, real = _stack(forecasts, realizations, hours)
    es = np.array([energy_score(s[i], real[i]) for i in range(len(real))])
    vs = np.array([variogram_score(s[i], real[i], gamma, vs_variant) for i in range(len(real))])
    wk = {}
    for a in alphas:
        lo, hi = interval_bounds(s, a)
        wk[float(a)] = winkler_score(lo, hi, real, a).mean(axis=1)
    cov = [pi_coverage(forecasts, real, lv) for lv in levels]
    model = forecasts[0].model
    return ScoreReport(model, [f.hour for f in forecasts], es, vs, wk, cov, gamma, vs_variant)


def coverage_table(reports: Sequence[ScoreReport]) -> list[list[str]]:
    """Rows ``model, level, overall, q00..q45`` as strings."""
    rows = [["model", "level", "overall"] + [f"q{q}" for q in QUARTERS]]
    for r in reports:
        for c in r.coverage:
            rows.append([r.model, repr(c.level), repr(c.overall)] + [repr(v) for v in c.per_quarter])
    return rows


# --------------------------------------------------------------------------- #
# forecast files


def write_forecasts(forecasts: Sequence[DensityForecast], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "model", "seed", "sample"] + [f"q{q}" for q in QUARTERS])
        for f in forecasts:
            for k, row in enumerate(f.samples):
                w.writerow([f.hour, f.model, "" if f.seed is None else f.seed, k] + [repr(float(v)) for v in row])


def read_forecasts(path) -> list[DensityForecast]:
    groups: dict[str, list] = {}
    meta: dict[str, tuple] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            h = rec["hour"]
            groups.setdefault(h, []).append([float(rec[f"q{q}"]) for q in QUARTERS])
            meta[h] = (rec["model"], int(rec["seed"]) if rec["seed"] else None)
    return [DensityForecast(h, meta[h][0], np.array(v), meta[h][1]) for h, v in groups.items()]
