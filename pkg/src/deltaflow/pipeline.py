"""Train / forecast / evaluate orchestration shared by the CLI and the benchmarks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import copula, flow, gaussian
from .dataset import MarketDataset, build_delta_series
from .errors import InvalidConfigError, ModelFormatError
from .features import FeatureScaler, PitTransform, build_feature_matrix, fit_pit, resolve_features, valid_rows
from .historical import HistoricalModel, build_index
from .scoring import DEFAULT_ALPHAS, DensityForecast, ScoreReport, score_forecasts

log = logging.getLogger(__name__)

MODELS = ("flow", "gaussian", "copula", "hist-multi", "hist-uni")
NETWORK_MODELS = ("flow", "gaussian")
ABLATION_SETS = ("lags_da", "errors", "ramps", "all")


def parse_time(value, name: str) -> np.datetime64:
    try:
        return np.datetime64(str(value).replace("Z", ""), "s")
    except ValueError as exc:
        raise InvalidConfigError(f"{name}: cannot parse {value!r} as a timestamp") from exc


@dataclass(frozen=True)
class Split:
    train_rows: np.ndarray
    test_rows: np.ndarray
    skipped: list[tuple[str, str]]


def split_rows(ds: MarketDataset, train_end, test_end=None) -> Split:
    """Chronological split: train hours precede ``train_end``, test hours lie in [train_end, test_end)."""
    t_end = parse_time(train_end, "train-end")
    if t_end <= ds.hours[0] or t_end > ds.hours[-1]:
        raise InvalidConfigError(f"train-end {t_end} lies outside the data range {ds.hours[0]}..{ds.hours[-1]}")
    e_end = ds.hours[-1] + np.timedelta64(1, "h") if test_end is None else parse_time(test_end, "test-end")
    if e_end <= t_end:
        raise InvalidConfigError("test range must follow the train range")
    ok = np.zeros(len(ds), dtype=bool)
    ok[valid_rows(ds)] = True
    train = np.nonzero(ok & (ds.hours < t_end))[0]
    in_test = (ds.hours >= t_end) & (ds.hours < e_end)
    test = np.nonzero(ok & in_test)[0]
    skipped = []
    for i in np.nonzero(in_test & ~ok)[0]:
        reason = "lag features unavailable" if i < 2 else "next day-ahead price unavailable"
        skipped.append((str(ds.hours[i]) + "Z", reason))
        log.info("skipping %sZ: %s", ds.hours[i], reason)
    if test.size == 0:
        raise InvalidConfigError("no forecastable hours in the test range")
    return Split(train, test, skipped)


@dataclass
class TrainedModel:
    kind: str
    features: tuple[str, ...]
    model: object
    pit: PitTransform | None = None
    scaler: FeatureScaler | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def loss_trace(self) -> list[float]:
        return list(getattr(self.model, "metadata", {}).get("loss_trace", []))

    def conditioning(self, ds: MarketDataset, rows) -> np.ndarray:
        _, X, _ = build_feature_matrix(ds, self.features, rows)
        return self.scaler.transform(X) if self.scaler is not None else X

    def sample(self, ds: MarketDataset, rows, n: int, seed=None) -> np.ndarray:
        """Difference-vector samples, shape (rows, n, 4), in EUR/MWh."""
        rows = np.asarray(rows, dtype=int)
        if self.kind.startswith("hist"):
            return self.model.sample_hours(ds.hour_of_day[rows], n, seed)
        z = self.model.sample_many(self.conditioning(ds, rows), n, seed)
        return self.pit.inverse(z)

    def to_json(self) -> dict:
        return {
            "format": "deltaflow.trained",
            "version": 1,
            "kind": self.kind,
            "features": list(self.features),
            "model": self.model.to_json(),
            "pit": None if self.pit is None else self.pit.to_json(),
            "scaler": None if self.scaler is None else self.scaler.to_json(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedModel":
        if obj.get("format") != "deltaflow.trained" or obj.get("version") != 1:
            raise ModelFormatError("not a version-1 trained model file")
        kind = obj["kind"]
        loader = {
            "flow": flow.FlowModel.from_json,
            "gaussian": gaussian.GaussianHead.from_json,
            "copula": copula.CopulaModel.from_json,
            "hist-multi": HistoricalModel.from_json,
            "hist-uni": HistoricalModel.from_json,
        }.get(kind)
        if loader is None:
            raise ModelFormatError(f"unknown model kind {kind!r}")
        return cls(
            kind,
            tuple(obj["features"]),
            loader(obj["model"]),
            None if obj["pit"] is None else PitTransform.from_json(obj["pit"]),
            None if obj["scaler"] is None else FeatureScaler.from_json(obj["scaler"]),
            dict(obj.get("metadata", {})),
        )


def train_model(
    ds: MarketDataset,
    kind: str,
    train_rows,
    features="all",
    seed=0,
    epochs: int = 500,
    batch: int = 128,
    lr: float = 1e-3,
) -> TrainedModel:
    if kind not in MODELS:
        raise InvalidConfigError(f"unknown model {kind!r}; choose from {', '.join(MODELS)}")
    rows = np.asarray(train_rows, dtype=int)
    if rows.size == 0:
        raise InvalidConfigError("no training hours before train-end")
    d = build_delta_series(ds).values[rows]
    meta = {"seed": seed, "train_rows": int(rows.size), "train_start": str(ds.hours[rows[0]]) + "Z", "train_stop": str(ds.hours[rows[-1]]) + "Z"}
    if kind.startswith("hist"):
        index = build_index(ds.hour_of_day[rows], d)
        return TrainedModel(kind, (), HistoricalModel(index, kind.split("-")[1]), metadata=meta)
    names = resolve_features(features)
    _, X, names = build_feature_matrix(ds, names, rows)
    scaler = FeatureScaler.fit(X)
    Xs = scaler.transform(X)
    pit = fit_pit(d)
    z = pit.forward(d)
    if kind == "flow":
        model = flow.fit(z, Xs, epochs=epochs, batch=batch, seed=seed, lr=lr)
    elif kind == "gaussian":
        model = gaussian.fit(z, Xs, epochs=epochs, batch=batch, seed=seed, lr=lr)
    else:
        model = copula.fit(Xs, z)
    meta.update({"epochs": epochs, "batch": batch, "lr": lr} if kind in NETWORK_MODELS else {})
    return TrainedModel(kind, names, model, pit, scaler, meta)


def forecast(trained: TrainedModel, ds: MarketDataset, rows, n: int = 100, seed=0) -> list[DensityForecast]:
    """``n`` price samples per hour: difference samples plus that hour's day-ahead price."""
    if n < 2:
        raise InvalidConfigError("need at least 2 samples per hour")
    rows = np.asarray(rows, dtype=int)
    deltas = trained.sample(ds, rows, n, seed)
    prices = deltas + ds.da[rows][:, None, None]
    return [DensityForecast(str(ds.hours[r]) + "Z", trained.kind, prices[k], seed) for k, r in enumerate(rows)]


def realizations(ds: MarketDataset, rows) -> np.ndarray:
    return ds.id3[np.asarray(rows, dtype=int)]


def evaluate(
    forecasts: Sequence[DensityForecast],
    ds: MarketDataset,
    rows,
    gamma: float = 0.5,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    vs_variant: str = "printed",
) -> ScoreReport:
    hours = [str(ds.hours[r]) + "Z" for r in rows]
    return score_forecasts(forecasts, realizations(ds, rows), gamma, alphas, vs_variant, hours=hours)


def run_benchmark(
    ds: MarketDataset,
    train_end,
    test_end=None,
    models: Sequence[str] = MODELS,
    features="all",
    samples: int = 100,
    seed=0,
    gamma: float = 0.5,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    vs_variant: str = "printed",
    epochs: int = 500,
) -> dict[str, ScoreReport]:
    split = split_rows(ds, train_end, test_end)
    out = {}
    for kind in models:
        trained = train_model(ds, kind, split.train_rows, features, seed, epochs)
        fc = forecast(trained, ds, split.test_rows, samples, seed)
        out[kind] = evaluate(fc, ds, split.test_rows, gamma, alphas, vs_variant)
    return out


def run_ablation(
    ds: MarketDataset,
    train_end,
    test_end=None,
    feature_sets: Sequence[str] = ABLATION_SETS,
    samples: int = 100,
    seed=0,
    gamma: float = 0.5,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    vs_variant: str = "printed",
    epochs: int = 500,
) -> tuple[dict[str, ScoreReport], dict[str, float]]:
    """Flow per feature set against historical selection.

    Returns the reports (keyed ``flow[<set>]`` plus ``hist-multi``) and each set's
    median energy-score improvement over the historical baseline.
    """
    split = split_rows(ds, train_end, test_end)
    reports = {}
    hist = train_model(ds, "hist-multi", split.train_rows, seed=seed)
    reports["hist-multi"] = evaluate(forecast(hist, ds, split.test_rows, samples, seed), ds, split.test_rows, gamma, alphas, vs_variant)
    base = float(np.median(reports["hist-multi"].energy))
    gains = {}
    for fs in feature_sets:
        trained = train_model(ds, "flow", split.train_rows, fs, seed, epochs)
        rep = evaluate(forecast(trained, ds, split.test_rows, samples, seed), ds, split.test_rows, gamma, alphas, vs_variant)
        rep.model = f"flow[{fs}]"
        reports[rep.model] = rep
        gains[fs] = base - float(np.median(rep.energy))
    return reports, gains
