"""Conditioning features, the probability integral transform and screening statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .dataset import QUARTERS, MarketDataset, build_delta_series
from .errors import (
    BoundaryHourError,
    DegenerateDimensionError,
    DimensionMismatchError,
    InvalidConfigError,
    LagUnavailableError,
    MissingColumnError,
    SeriesTooShortError,
    TooFewSamplesError,
    ZeroVarianceError,
)

FEATURE_GROUPS: dict[str, tuple[str, ...]] = {
    "price_time": (
        "da",
        "da_inc_back",
        "da_inc_ahead",
        "cos_hour",
        "sin_hour",
        *(f"lag1_{q}" for q in QUARTERS),
        *(f"lag2_{q}" for q in QUARTERS),
    ),
    "errors": tuple(f"{kind}_err_{q}" for kind in ("solar", "wind", "load") for q in QUARTERS),
    "ramps": ("ramp_solar", "ramp_wind", "ramp_load", "ramp_total_gen", "ramp_import_export"),
    "fuel": ("oil", "gas"),
}
GROUP_ORDER = ("price_time", "errors", "ramps", "fuel")
ALL_FEATURES = tuple(name for g in GROUP_ORDER for name in FEATURE_GROUPS[g])

# named subsets used by the ablation study
FEATURE_SETS: dict[str, tuple[str, ...]] = {
    "all": ALL_FEATURES,
    "lags_da": ("da_inc_back", "da_inc_ahead", *(f"lag1_{q}" for q in QUARTERS)),
    "none": (),
}

LABELS = {
    "da": "DA",
    "da_inc_back": "ΔDA⁻",
    "da_inc_ahead": "ΔDA⁺",
    "cos_hour": "cos(t)",
    "sin_hour": "sin(t)",
    **{f"lag1_{q}": f"ΔID3 {q} (t-1h)" for q in QUARTERS},
    **{f"lag2_{q}": f"ΔID3 {q} (t-2h)" for q in QUARTERS},
    **{f"{k}_err_{q}": f"{k.capitalize()} Error {q}" for k in ("solar", "wind", "load") for q in QUARTERS},
    "ramp_solar": "DA solar ramp",
    "ramp_wind": "DA wind ramp",
    "ramp_load": "DA load ramp",
    "ramp_total_gen": "DA total gen ramp",
    "ramp_import_export": "DA import/export ramp",
    "oil": "Oil price",
    "gas": "Gas price",
}

_RAMP_SOURCE = {
    "ramp_solar": "solar_forecast",
    "ramp_wind": "wind_forecast",
    "ramp_load": "load_forecast",
    "ramp_total_gen": "total_gen_forecast",
    "ramp_import_export": "import_export_forecast",
}


def group_of(name: str) -> str:
    for g in GROUP_ORDER:
        if name in FEATURE_GROUPS[g]:
            return g
    raise KeyError(name)


def resolve_features(spec: str | Iterable[str]) -> tuple[str, ...]:
    """Turn groups, named sets or single feature names into the canonical ordering.

    ``"price_time,ramps"``, ``["lags_da"]`` and ``"all"`` are all accepted.
    """
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    wanted: set[str] = set()
    for item in spec:
        if item in FEATURE_GROUPS:
            wanted.update(FEATURE_GROUPS[item])
        elif item in FEATURE_SETS:
            wanted.update(FEATURE_SETS[item])
        elif item in ALL_FEATURES:
            wanted.add(item)
        else:
            raise InvalidConfigError(f"unknown feature group or name {item!r}")
    return tuple(name for name in ALL_FEATURES if name in wanted)


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def group(self, group: str) -> "FeatureVector":
        keep = [i for i, n in enumerate(self.names) if n in FEATURE_GROUPS[group]]
        return FeatureVector(tuple(self.names[i] for i in keep), self.values[keep])

    def to_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def serialize(self) -> str:
        return ",".join(f"{n}={float(v)!r}" for n, v in zip(self.names, self.values))

    @classmethod
    def parse(cls, text: str) -> "FeatureVector":
        pairs = [item.split("=", 1) for item in text.split(",") if item]
        return cls(tuple(k for k, _ in pairs), np.array([float(v) for _, v in pairs]))


def valid_rows(ds: MarketDataset) -> np.ndarray:
    """Hour indices with both lags and the next day-ahead price available."""
    return np.arange(2, len(ds) - 1)


def _hour_index(ds: MarketDataset, t) -> int:
    if isinstance(t, (np.datetime64, str)):
        hits = np.nonzero(ds.hours == np.datetime64(t, "s"))[0]
        if hits.size == 0:
            raise LagUnavailableError(f"hour {t} not in dataset")
        return int(hits[0])
    return int(t)


def build_feature_matrix(ds: MarketDataset, features: str | Iterable[str], rows: Sequence[int] | None = None):
    """Feature rows for many hours at once; returns ``(rows, X, names)``."""
    names = resolve_features(features)
    rows = valid_rows(ds) if rows is None else np.asarray(rows, dtype=int)
    if rows.size and (rows.min() < 2 or rows.max() > len(ds) - 2):
        raise LagUnavailableError("requested rows lack lags or the next day-ahead price")
    d = build_delta_series(ds).values
    hod = ds.hour_of_day
    cols = []
    for name in names:
        cols.append(_feature_column(ds, d, hod, name, rows))
    X = np.stack(cols, axis=1) if cols else np.empty((len(rows), 0))
    return rows, X, names


def _feature_column(ds, d, hod, name, rows) -> np.ndarray:
    if name == "da":
        return ds.da[rows]
    if name == "da_inc_back":
        return ds.da[rows] - ds.da[rows - 1]
    if name == "da_inc_ahead":
        return ds.da[rows + 1] - ds.da[rows]
    if name == "cos_hour":
        return np.cos(2 * np.pi * hod[rows] / 24.0)
    if name == "sin_hour":
        return np.sin(2 * np.pi * hod[rows] / 24.0)
    if name.startswith("lag"):
        lag = int(name[3])
        return d[rows - lag, QUARTERS.index(name[-2:])]
    if "_err_" in name:
        kind, _, q = name.split("_")
        actual, forecast = f"{kind}_actual", f"{kind}_forecast"
        if actual not in ds.quarter or forecast not in ds.quarter:
            raise MissingColumnError(f"feature {name!r} needs {actual!r} and {forecast!r}")
        k = QUARTERS.index(q)
        return ds.quarter[actual][rows, k] - ds.quarter[forecast][rows, k]
    if name in _RAMP_SOURCE:
        src = _RAMP_SOURCE[name]
        if src not in ds.quarter:
            raise MissingColumnError(f"feature {name!r} needs {src!r}")
        hourly = ds.quarter[src].mean(axis=1)
        return hourly[rows] - hourly[rows - 1]
    if name in ("oil", "gas"):
        if name not in ds.fuel:
            raise MissingColumnError(f"feature {name!r} needs fuel prices")
        return ds.fuel[name][rows]
    raise KeyError(name)


def build_features(ds: MarketDataset, t, groups: str | Iterable[str] = "all") -> FeatureVector:
    """Feature vector of a single hour ``t`` (index or UTC timestamp)."""
    i = _hour_index(ds, t)
    if i <= 0 or i >= len(ds) - 1:
        raise BoundaryHourError(f"hour index {i} is the first or last hour of the dataset")
    if i < 2:
        raise LagUnavailableError(f"hour index {i} has no t-2h lag")
    _, X, names = build_feature_matrix(ds, groups, [i])
    return FeatureVector(names, X[0])


def write_feature_matrix(path, hours: np.ndarray, X: np.ndarray, names: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *names])
        for t, row in zip(hours, X):
            w.writerow([str(np.datetime64(t, "s")) + "Z", *(repr(float(v)) for v in row)])


# --------------------------------------------------------------------------- #
# probability integral transform

MIN_PIT_SAMPLES = 50


@dataclass(frozen=True)
class PitTransform:
    """Per-dimension empirical CDF (Hazen positions) composed with the normal quantile."""

    support: tuple[np.ndarray, ...]
    positions: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return len(self.support)

    def _check(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-1] != self.dim:
            raise DimensionMismatchError(f"expected {self.dim} columns, got {a.shape[-1]}")
        return a

    def forward(self, x) -> np.ndarray:
        x = self._check(x)
        out = np.empty_like(x)
        for k in range(self.dim):
            u = np.interp(x[..., k], self.support[k], self.positions[k])
            out[..., k] = special.ndtri(u)
        return out

    def inverse(self, z) -> np.ndarray:
        z = self._check(z)
        out = np.empty_like(z)
        for k in range(self.dim):
            u = special.ndtr(z[..., k])
            out[..., k] = np.interp(u, self.positions[k], self.support[k])
        return out

    def to_json(self) -> dict:
        return {
            "support": [s.tolist() for s in self.support],
            "positions": [p.tolist() for p in self.positions],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PitTransform":
        return cls(
            tuple(np.array(s, dtype=np.float64) for s in obj["support"]),
            tuple(np.array(p, dtype=np.float64) for p in obj["positions"]),
        )


def fit_pit(values) -> PitTransform:
    """Fit one transform per column of ``values`` (shape (n, k))."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    if n < MIN_PIT_SAMPLES:
        raise TooFewSamplesError(f"PIT needs at least {MIN_PIT_SAMPLES} values per dimension, got {n}")
    support, positions = [], []
    hazen = (np.arange(1, n + 1) - 0.5) / n
    for k in range(values.shape[1]):
        xs = np.sort(values[:, k])
        uniq, first, counts = np.unique(xs, return_index=True, return_counts=True)
        if uniq.size < 2:
            raise DegenerateDimensionError(f"dimension {k} is constant")
        # tied values share the mean of their plotting positions
        pos = np.add.reduceat(hazen, first) / counts
        support.append(uniq)
        positions.append(pos)
    return PitTransform(tuple(support), tuple(positions))


def pit_inverse(transform: PitTransform, z) -> np.ndarray:
    return transform.inverse(z)


# --------------------------------------------------------------------------- #
# input scaling for the networks


@dataclass(frozen=True)
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "FeatureScaler":
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        # constant columns pass through centred
        std = np.where(std > 0, std, 1.0)
        return cls(X.mean(axis=0), std)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureScaler":
        return cls(np.array(obj["mean"], dtype=np.float64), np.array(obj["std"], dtype=np.float64))


# --------------------------------------------------------------------------- #
# screening statistics


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatchError("pearson needs equal-length series")
    if x.size < 2:
        raise SeriesTooShortError("pearson needs at least two values")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise ZeroVarianceError("pearson of a constant series")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def acf(series, max_lag: int) -> np.ndarray:
    """Pearson autocorrelation for lags ``0..max_lag`` (in samples)."""
    x = np.asarray(series, dtype=np.float64)
    if x.size <= max_lag + 1:
        raise SeriesTooShortError(f"series of length {x.size} too short for max_lag {max_lag}")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = pearson(x[:-k], x[k:])
    return out


def correlation_table(X, names: Sequence[str], targets) -> dict[str, np.ndarray]:
    """Pearson correlation of each feature column with each target dimension."""
    targets = np.asarray(targets)
    table = {}
    for j, name in enumerate(names):
        col = X[:, j]
        if np.all(col == col[0]):
            table[name] = np.full(targets.shape[1], np.nan)
            continue
        table[name] = np.array([pearson(col, targets[:, k]) for k in range(targets.shape[1])])
    return table
