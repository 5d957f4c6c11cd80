"""Market data ingestion, alignment and the synthetic market generator.

All timestamps are UTC ``datetime64[s]``. Quarter-hourly series are folded into
hourly rows with four columns (minutes 00, 15, 30, 45), so every array in a
:class:`MarketDataset` shares the same leading hour axis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (
    EmptyOverlapError,
    GapDetectedError,
    InvalidConfigError,
    MissingColumnError,
    NonMonotonicTimestampError,
)

HOURLY = "hourly"
QUARTER_HOURLY = "quarter-hourly"
DAILY = "daily"

QUARTERS = ("00", "15", "30", "45")

_STEP = {
    HOURLY: np.timedelta64(3600, "s"),
    QUARTER_HOURLY: np.timedelta64(900, "s"),
    DAILY: np.timedelta64(86400, "s"),
}

DA_SCHEMA = {"timestamp": "timestamp", "price": "price"}
ID3_SCHEMA = {"timestamp": "timestamp", "price": "price"}
RENEWABLES_SCHEMA = {
    "timestamp": "timestamp",
    "solar_actual": "solar_actual",
    "solar_forecast": "solar_forecast",
    "wind_actual": "wind_actual",
    "wind_forecast": "wind_forecast",
    "load_actual": "load_actual",
    "load_forecast": "load_forecast",
}
# optional in renewables.csv; see _fill_generation_defaults
GENERATION_COLUMNS = ("total_gen_forecast", "import_export_forecast")
FUEL_SCHEMA = {"timestamp": "date", "oil": "oil", "gas": "gas"}

# canonical order of the quarter-hourly exogenous columns
QUARTER_COLUMNS = (
    "solar_actual",
    "solar_forecast",
    "wind_actual",
    "wind_forecast",
    "load_actual",
    "load_forecast",
    "total_gen_forecast",
    "import_export_forecast",
)
FUEL_COLUMNS = ("oil", "gas")


def _frozen(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PriceSeries:
    """Validated, uniformly spaced time series with one or more value columns."""

    timestamps: np.ndarray
    values: np.ndarray  # (n, k)
    resolution: str
    columns: tuple = ("price",)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype="datetime64[s]")))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "columns", tuple(self.columns))
        if values.shape != (len(self.timestamps), len(self.columns)):
            raise ValueError("values shape does not match timestamps/columns")

    def __len__(self) -> int:
        return len(self.timestamps)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


@dataclass(frozen=True)
class DeltaVector:
    hour: np.datetime64
    d: np.ndarray  # 4 values, minutes 00/15/30/45


@dataclass(frozen=True)
class DeltaSeries:
    """Price differences for consecutive hours; iterating yields DeltaVectors."""

    hours: np.ndarray
    values: np.ndarray  # (n, 4)

    def __len__(self) -> int:
        return len(self.hours)

    def __getitem__(self, i: int) -> DeltaVector:
        return DeltaVector(self.hours[i], self.values[i])

    def __iter__(self) -> Iterator[DeltaVector]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class GroundTruth:
    """Conditional law of the synthetic differences.

    Hour ``i`` has ``d[i] = mean[i] + scale[i] * w`` where ``w`` is a
    multivariate Student-t (``df``) or, for ``df = inf``, Gaussian vector with
    correlation ``corr``.
    """

    mean: np.ndarray  # (n, 4)
    scale: np.ndarray  # (n,)
    corr: np.ndarray  # (4, 4)
    df: float

    def covariance(self, i: int) -> np.ndarray:
        cov = self.scale[i] ** 2 * self.corr
        if math.isfinite(self.df):
            cov = cov * self.df / (self.df - 2.0)
        return cov

    def log_density(self, i, x):
        """Log density of ``x`` (shape (4,) or (m, 4)) under the law of hour(s) ``i``."""
        single = np.ndim(x) == 1
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        i = np.broadcast_to(np.asarray(i), x.shape[:1])
        s = self.scale[i]
        if np.any(s <= 0):
            raise ValueError("degenerate ground truth (zero scale)")
        w = (x - self.mean[i]) / s[:, None]
        if math.isfinite(self.df):
            base = stats.multivariate_t(loc=np.zeros(4), shape=self.corr, df=self.df)
        else:
            base = stats.multivariate_normal(mean=np.zeros(4), cov=self.corr)
        out = np.atleast_1d(base.logpdf(w)) - 4.0 * np.log(s)
        return float(out[0]) if single else out

    def to_json(self) -> dict:
        return {
            "df": "inf" if not math.isfinite(self.df) else self.df,
            "corr": self.corr.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        df = math.inf if obj["df"] == "inf" else float(obj["df"])
        return cls(
            mean=np.array(obj["mean"], dtype=np.float64).reshape(-1, 4),
            scale=np.array(obj["scale"], dtype=np.float64),
            corr=np.array(obj["corr"], dtype=np.float64),
            df=df,
        )


@dataclass(frozen=True)
class MarketDataset:
    """Hour-aligned market table.

    ``quarter`` maps exogenous names to (n, 4) arrays; ``fuel`` maps fuel names
    to hourly (n,) arrays forward-filled from daily prices.
    """

    hours: np.ndarray
    da: np.ndarray
    id3: np.ndarray
    quarter: Mapping[str, np.ndarray] = field(default_factory=dict)
    fuel: Mapping[str, np.ndarray] = field(default_factory=dict)
    truth: GroundTruth | None = None

    def __post_init__(self):
        object.__setattr__(self, "hours", _frozen(np.asarray(self.hours, dtype="datetime64[s]")))
        object.__setattr__(self, "da", _frozen(np.asarray(self.da, dtype=np.float64)))
        object.__setattr__(self, "id3", _frozen(np.asarray(self.id3, dtype=np.float64)))
        object.__setattr__(self, "quarter", {k: _frozen(np.asarray(v, dtype=np.float64)) for k, v in self.quarter.items()})
        object.__setattr__(self, "fuel", {k: _frozen(np.asarray(v, dtype=np.float64)) for k, v in self.fuel.items()})
        n = len(self.hours)
        if self.da.shape != (n,) or self.id3.shape != (n, 4):
            raise ValueError("inconsistent dataset shapes")
        for name, v in self.quarter.items():
            if v.shape != (n, 4):
                raise ValueError(f"quarter column {name!r} has shape {v.shape}")
        for name, v in self.fuel.items():
            if v.shape != (n,):
                raise ValueError(f"fuel column {name!r} has shape {v.shape}")
        if n > 1 and np.any(np.diff(self.hours) != _STEP[HOURLY]):
            raise GapDetectedError("dataset hours are not contiguous")

    def __len__(self) -> int:
        return len(self.hours)

    @property
    def hour_of_day(self) -> np.ndarray:
        return ((self.hours - self.hours.astype("datetime64[D]")) // np.timedelta64(1, "h")).astype(int)

    def slice(self, start: int, stop: int) -> "MarketDataset":
        truth = None
        if self.truth is not None:
            t = self.truth
            truth = GroundTruth(t.mean[start:stop], t.scale[start:stop], t.corr, t.df)
        return MarketDataset(
            hours=self.hours[start:stop],
            da=self.da[start:stop],
            id3=self.id3[start:stop],
            quarter={k: v[start:stop] for k, v in self.quarter.items()},
            fuel={k: v[start:stop] for k, v in self.fuel.items()},
            truth=truth,
        )

    def to_series(self) -> tuple[PriceSeries, PriceSeries, list[PriceSeries]]:
        """Split back into the raw series accepted by :func:`align`."""
        quarters = _quarter_stamps(self.hours)
        da = PriceSeries(self.hours, self.da, HOURLY)
        id3 = PriceSeries(quarters, self.id3.reshape(-1), QUARTER_HOURLY)
        exo = []
        if self.quarter:
            names = [c for c in QUARTER_COLUMNS if c in self.quarter]
            vals = np.stack([self.quarter[c].reshape(-1) for c in names], axis=1)
            exo.append(PriceSeries(quarters, vals, QUARTER_HOURLY, tuple(names)))
        if self.fuel:
            days = np.unique(self.hours.astype("datetime64[D]")).astype("datetime64[s]")
            day_idx = np.searchsorted(self.hours, days)
            names = [c for c in FUEL_COLUMNS if c in self.fuel]
            vals = np.stack([self.fuel[c][day_idx] for c in names], axis=1)
            # only whole days are representable at daily resolution
            exo.append(PriceSeries(days, vals, DAILY, tuple(names)))
        return da, id3, exo


def _quarter_stamps(hours: np.ndarray) -> np.ndarray:
    offsets = np.arange(4) * np.timedelta64(900, "s")
    return (hours[:, None] + offsets[None, :]).reshape(-1)


# --------------------------------------------------------------------------- #
# ingestion


def _parse_timestamps(raw: pd.Series) -> np.ndarray:
    ts = pd.to_datetime(raw, utc=True, format="ISO8601")
    return ts.dt.tz_convert("UTC").dt.tz_localize(None).to_numpy().astype("datetime64[s]")


def load_csv(path, schema: Mapping[str, str], resolution: str) -> PriceSeries:
    """Read and validate one CSV export.

    ``schema`` maps canonical names to CSV header names and must contain a
    ``timestamp`` entry. Offending rows are reported with their 1-based line
    number in the file (the header is line 1).
    """
    if resolution not in _STEP:
        raise InvalidConfigError(f"unknown resolution {resolution!r}")
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    for canonical, column in schema.items():
        if column not in frame.columns:
            raise MissingColumnError(f"{path.name}: missing column {column!r} (for {canonical})")
    value_names = [k for k in schema if k != "timestamp"]
    optional = [c for c in GENERATION_COLUMNS if c in frame.columns and c not in schema]
    value_names += optional
    columns = {**schema, **{c: c for c in optional}}

    stamps = _parse_timestamps(frame[columns["timestamp"]])
    values = np.empty((len(frame), len(value_names)))
    for j, name in enumerate(value_names):
        raw = frame[columns[name]].str.strip()
        bad = raw == ""
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            raise GapDetectedError(f"{path.name}: line {row + 2}: missing value in {columns[name]!r}")
        try:
            values[:, j] = raw.map(float).to_numpy()
        except ValueError as exc:
            raise GapDetectedError(f"{path.name}: unparsable value in {columns[name]!r}: {exc}") from None
        if not np.all(np.isfinite(values[:, j])):
            row = int(np.argmax(~np.isfinite(values[:, j])))
            raise GapDetectedError(f"{path.name}: line {row + 2}: non-finite value in {columns[name]!r}")

    step = _STEP[resolution]
    if len(stamps) > 1:
        diffs = np.diff(stamps)
        back = np.nonzero(diffs <= np.timedelta64(0, "s"))[0]
        if back.size:
            raise NonMonotonicTimestampError(
                f"{path.name}: line {back[0] + 3}: timestamp {stamps[back[0] + 1]} does not increase"
            )
        gaps = np.nonzero(diffs != step)[0]
        if gaps.size:
            raise GapDetectedError(
                f"{path.name}: line {gaps[0] + 3}: spacing {diffs[gaps[0]]} after {stamps[gaps[0]]}, expected {step}"
            )
    if len(stamps) and (stamps[0] - stamps[0].astype("datetime64[D]")) % step != np.timedelta64(0, "s"):
        raise GapDetectedError(f"{path.name}: line 2: timestamp {stamps[0]} not on a {resolution} boundary")
    return PriceSeries(stamps, values, resolution, tuple(value_names))


def _hour_coverage(series: PriceSeries) -> tuple[np.datetime64, np.datetime64]:
    """First and last hour fully covered by ``series`` (inclusive)."""
    t = series.timestamps
    if series.resolution == HOURLY:
        return t[0], t[-1]
    if series.resolution == QUARTER_HOURLY:
        first = t[0].astype("datetime64[h]")
        if first < t[0]:
            first = first + np.timedelta64(1, "h")
        last_end = t[-1] + _STEP[QUARTER_HOURLY]
        last = last_end.astype("datetime64[h]") - np.timedelta64(1, "h")
        return first.astype("datetime64[s]"), last.astype("datetime64[s]")
    # daily values forward-fill to every hour of their day
    return t[0], (t[-1] + np.timedelta64(23, "h")).astype("datetime64[s]")


def _fill_generation_defaults(quarter: dict) -> dict:
    """Without explicit columns assume a balanced grid: generation covers load, no net import."""
    if "load_forecast" in quarter:
        quarter.setdefault("total_gen_forecast", quarter["load_forecast"].copy())
        quarter.setdefault("import_export_forecast", np.zeros_like(quarter["load_forecast"]))
    return quarter


def align(da: PriceSeries, id3: PriceSeries, exogenous: Sequence[PriceSeries] = ()) -> MarketDataset:
    """Restrict all series to their common hour range and fold quarters into rows."""
    if da.resolution != HOURLY:
        raise InvalidConfigError("day-ahead series must be hourly")
    if id3.resolution != QUARTER_HOURLY:
        raise InvalidConfigError("ID3 series must be quarter-hourly")
    all_series = [da, id3, *exogenous]
    if any(len(s) == 0 for s in all_series):
        raise EmptyOverlapError("an input series is empty")
    ranges = [_hour_coverage(s) for s in all_series]
    start = max(r[0] for r in ranges)
    stop = min(r[1] for r in ranges)
    if start > stop:
        raise EmptyOverlapError(f"series do not overlap (latest start {start}, earliest end {stop})")

    hours = np.arange(start, stop + np.timedelta64(1, "h"), np.timedelta64(1, "h")).astype("datetime64[s]")
    n = len(hours)

    def rows(series: PriceSeries) -> np.ndarray:
        i0 = int((start - series.timestamps[0]) // _STEP[series.resolution])
        if series.resolution == HOURLY:
            return series.values[i0 : i0 + n]
        if series.resolution == QUARTER_HOURLY:
            return series.values[i0 : i0 + 4 * n].reshape(n, 4, -1)
        day_index = (hours.astype("datetime64[D]") - series.timestamps[0].astype("datetime64[D]")).astype(int)
        return series.values[day_index]

    quarter: dict[str, np.ndarray] = {}
    fuel: dict[str, np.ndarray] = {}
    for series in exogenous:
        block = rows(series)
        for j, name in enumerate(series.columns):
            if series.resolution == QUARTER_HOURLY:
                quarter[name] = block[:, :, j]
            elif series.resolution == DAILY:
                fuel[name] = block[:, j]
            else:
                # hourly exogenous values hold for all four quarters
                quarter[name] = np.repeat(block[:, j : j + 1], 4, axis=1)
    quarter = _fill_generation_defaults(quarter)
    return MarketDataset(
        hours=hours,
        da=rows(da)[:, 0],
        id3=rows(id3)[:, :, 0],
        quarter={k: quarter[k] for k in QUARTER_COLUMNS if k in quarter},
        fuel={k: fuel[k] for k in FUEL_COLUMNS if k in fuel},
    )


def load_dataset_dir(data_dir) -> MarketDataset:
    """Load ``da.csv``, ``id3.csv`` and the optional renewables/fuel files."""
    data_dir = Path(data_dir)
    flat = data_dir / "dataset.csv"
    if flat.exists() and not (data_dir / "da.csv").exists():
        return read_dataset(flat)
    da = load_csv(data_dir / "da.csv", DA_SCHEMA, HOURLY)
    id3 = load_csv(data_dir / "id3.csv", ID3_SCHEMA, QUARTER_HOURLY)
    exo = []
    if (data_dir / "renewables.csv").exists():
        exo.append(load_csv(data_dir / "renewables.csv", RENEWABLES_SCHEMA, QUARTER_HOURLY))
    if (data_dir / "fuel.csv").exists():
        exo.append(load_csv(data_dir / "fuel.csv", FUEL_SCHEMA, DAILY))
    ds = align(da, id3, exo)
    truth_path = data_dir / "truth.json"
    if truth_path.exists():
        ds = _attach_truth(ds, truth_path)
    return ds


def _attach_truth(ds: MarketDataset, truth_path: Path) -> MarketDataset:
    obj = json.loads(truth_path.read_text())
    start = np.datetime64(obj["start"].rstrip("Z"), "s")
    truth = GroundTruth.from_json(obj)
    offset = int((ds.hours[0] - start) // np.timedelta64(1, "h"))
    if offset < 0 or offset + len(ds) > len(truth.scale):
        return ds
    sl = slice(offset, offset + len(ds))
    return MarketDataset(
        ds.hours, ds.da, ds.id3, ds.quarter, ds.fuel,
        GroundTruth(truth.mean[sl], truth.scale[sl], truth.corr, truth.df),
    )


# --------------------------------------------------------------------------- #
# delta series


def build_delta_series(ds: MarketDataset) -> DeltaSeries:
    """ID3 quarter prices minus the enclosing hour's day-ahead price."""
    return DeltaSeries(ds.hours, ds.id3 - ds.da[:, None])


# --------------------------------------------------------------------------- #
# serialization


def _fmt_time(t: np.datetime64) -> str:
    return str(np.datetime64(t, "s")) + "Z"


def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_columns(ds: MarketDataset) -> list[str]:
    cols = ["timestamp", "da"] + [f"id3_{q}" for q in QUARTERS]
    for name in QUARTER_COLUMNS:
        if name in ds.quarter:
            cols += [f"{name}_{q}" for q in QUARTERS]
    cols += [name for name in FUEL_COLUMNS if name in ds.fuel]
    return cols


def write_dataset(ds: MarketDataset, path) -> None:
    """Flat CSV, one row per hour, shortest round-tripping float repr."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset_columns(ds))
        quarter_names = [n for n in QUARTER_COLUMNS if n in ds.quarter]
        fuel_names = [n for n in FUEL_COLUMNS if n in ds.fuel]
        for i in range(len(ds)):
            row = [_fmt_time(ds.hours[i]), _fmt(ds.da[i])]
            row += [_fmt(v) for v in ds.id3[i]]
            for name in quarter_names:
                row += [_fmt(v) for v in ds.quarter[name][i]]
            row += [_fmt(ds.fuel[name][i]) for name in fuel_names]
            w.writerow(row)


def read_dataset(path) -> MarketDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:6] != ["timestamp", "da"] + [f"id3_{q}" for q in QUARTERS]:
        raise MissingColumnError(f"{path.name}: not a dataset file (header {header[:6]})")
    hours = np.array([np.datetime64(r[0].rstrip("Z"), "s") for r in rows], dtype="datetime64[s]")
    vals = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 1)
    col = {name: j for j, name in enumerate(header[1:])}
    quarter = {}
    for name in QUARTER_COLUMNS:
        keys = [f"{name}_{q}" for q in QUARTERS]
        if all(k in col for k in keys):
            quarter[name] = vals[:, [col[k] for k in keys]]
    fuel = {name: vals[:, col[name]] for name in FUEL_COLUMNS if name in col}
    return MarketDataset(
        hours=hours,
        da=vals[:, col["da"]],
        id3=vals[:, [col[f"id3_{q}"] for q in QUARTERS]],
        quarter=quarter,
        fuel=fuel,
    )


def write_raw_files(ds: MarketDataset, data_dir) -> None:
    """Write the provider-style input files (da, id3, renewables, fuel)."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    quarters = _quarter_stamps(ds.hours)
    with (data_dir / "da.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "price"])
        for t, v in zip(ds.hours, ds.da):
            w.writerow([_fmt_time(t), _fmt(v)])
    with (data_dir / "id3.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "price"])
        for t, v in zip(quarters, ds.id3.reshape(-1)):
            w.writerow([_fmt_time(t), _fmt(v)])
    names = [c for c in QUARTER_COLUMNS if c in ds.quarter]
    if names:
        with (data_dir / "renewables.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", *names])
            flat = np.stack([ds.quarter[c].reshape(-1) for c in names], axis=1)
            for t, row in zip(quarters, flat):
                w.writerow([_fmt_time(t), *(_fmt(v) for v in row)])
    if ds.fuel:
        _, _, exo = ds.to_series()
        daily = exo[-1]
        with (data_dir / "fuel.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", *daily.columns])
            for t, row in zip(daily.timestamps, daily.values):
                w.writerow([str(t.astype("datetime64[D]")), *(_fmt(v) for v in row)])


# --------------------------------------------------------------------------- #
# synthetic market


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic market.

    ``coupling`` scales the within-hour ramp of the differences with the local
    day-ahead slope: positive coupling makes the quarters rise through the hour
    when the day-ahead price is rising. ``tail_df`` is the Student-t degrees of
    freedom of the noise (``inf`` gives Gaussian noise). Forecast-error and
    noise contributions both scale with ``noise_scale``.
    """

    days: int = 150
    start: str = "2019-01-01"
    base_price: float = 45.0
    amplitude: float = 15.0
    da_noise: float = 4.0
    coupling: float = 0.6
    saturation: float = 25.0
    ar: float = 0.6
    noise_scale: float = 3.0
    error_coupling: float = 1.0
    heteroscedasticity: float = 1.0
    quarter_corr: float = 0.85
    tail_df: float = 3.0
    convexity: float = 3.0

    def validate(self) -> None:
        if int(self.days) != self.days or self.days < 1:
            raise InvalidConfigError(f"days must be a positive integer, got {self.days}")
        if self.noise_scale < 0 or self.da_noise < 0 or self.amplitude < 0:
            raise InvalidConfigError("noise scales and amplitude must be non-negative")
        if self.saturation <= 0:
            raise InvalidConfigError("saturation must be positive")
        if not -1 < self.ar < 1:
            raise InvalidConfigError("ar must lie in (-1, 1)")
        if not -1 < self.quarter_corr < 1:
            raise InvalidConfigError("quarter_corr must lie in (-1, 1)")
        if not self.tail_df > 2:
            raise InvalidConfigError("tail_df must exceed 2 (finite variance)")
        if self.convexity < 0:
            raise InvalidConfigError("convexity must be non-negative")
        if self.heteroscedasticity < 0:
            raise InvalidConfigError("heteroscedasticity must be non-negative")
        try:
            np.datetime64(self.start, "D")
        except ValueError:
            raise InvalidConfigError(f"bad start date {self.start!r}") from None

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise InvalidConfigError(f"unknown synthetic config key {key!r}")
            default = getattr(cls, key)
            kwargs[key] = type(default)(value) if not isinstance(default, str) else str(value)
        return cls(**kwargs)


# Position of each quarter relative to the hour centre, in hours.
QUARTER_OFFSETS = np.array([-0.375, -0.125, 0.125, 0.375])


def _ar1(rng, n, phi, sigma, size=None):
    shape = (n,) if size is None else (n, size)
    eps = rng.standard_normal(shape) * sigma
    out = np.empty(shape)
    out[0] = eps[0] / math.sqrt(1 - phi**2)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + eps[i]
    return out


def generate_synthetic(config: SynthConfig, seed: int) -> MarketDataset:
    """Simulate a German-like DA/ID3 market with known conditional law.

    The returned dataset carries its :class:`GroundTruth`; the conditional
    mean of hour ``i`` depends on the day-ahead slope around ``i``, the
    previous hour's differences and the renewable forecast errors of ``i``.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n = int(config.days) * 24
    start = np.datetime64(config.start, "D").astype("datetime64[s]")
    hours = start + np.arange(n) * np.timedelta64(3600, "s")
    hod = np.arange(n) % 24
    tq = hod[:, None] + 0.5 + QUARTER_OFFSETS[None, :]  # quarter centres, hours of day
    day = np.arange(n) // 24

    # renewable and load forecasts, MW
    cloud = 0.55 + 0.45 * rng.random(int(config.days))
    solar_f = 30000.0 * cloud[day][:, None] * np.clip(np.sin(np.pi * (tq - 6.0) / 12.0), 0.0, None)
    wind_level = 15000.0 + 2500.0 * _ar1(rng, n, 0.97, 1.0)
    wind_f = np.clip(wind_level[:, None] + 300.0 * rng.standard_normal((n, 4)), 500.0, None)
    load_day = 1.0 + 0.03 * _ar1(rng, int(config.days), 0.7, 1.0)
    load_shape = 1.0 + 0.12 * np.sin(2 * np.pi * (tq - 9.0) / 24.0) + 0.05 * np.sin(4 * np.pi * (tq - 4.0) / 24.0)
    load_f = 60000.0 * load_day[day][:, None] * load_shape
    imp_exp = 2000.0 * _ar1(rng, n, 0.95, 1.0)[:, None] + 100.0 * rng.standard_normal((n, 4))
    # generation covers load net of imports, plus storage/balancing that neither forecast sees
    total_gen = load_f - imp_exp + 600.0 * _ar1(rng, n, 0.9, 1.0)[:, None] + 150.0 * rng.standard_normal((n, 4))

    # forecast errors: actual = forecast + error
    err_solar = (0.05 * solar_f + 50.0) * _ar1(rng, n * 4, 0.9, math.sqrt(1 - 0.81)).reshape(n, 4)
    err_wind = 1200.0 * _ar1(rng, n * 4, 0.95, math.sqrt(1 - 0.95**2)).reshape(n, 4)
    err_load = 800.0 * _ar1(rng, n * 4, 0.9, math.sqrt(1 - 0.81)).reshape(n, 4)
    solar_a = np.clip(solar_f + err_solar, 0.0, None)
    err_solar = solar_a - solar_f
    wind_a = wind_f + err_wind
    load_a = load_f + err_load

    # day-ahead price driven by the residual load forecast
    residual = (load_f - solar_f - wind_f).mean(axis=1)
    residual_z = (residual - residual.mean()) / (residual.std() + 1e-12)
    profile = np.sin(2 * np.pi * (hod - 9.0) / 24.0) + 0.5 * np.sin(4 * np.pi * (hod - 4.0) / 24.0)
    da_day = 3.0 * _ar1(rng, int(config.days), 0.8, 1.0)
    da = (
        config.base_price
        + config.amplitude * profile
        + 0.5 * config.amplitude * residual_z
        + da_day[day]
        + config.da_noise * rng.standard_normal(n)
    )

    # local day-ahead slope, EUR/MWh per hour
    slope = np.empty(n)
    if n == 1:
        slope[:] = 0.0
    else:
        slope[1:-1] = 0.5 * (da[2:] - da[:-2])
        slope[0] = da[1] - da[0]
        slope[-1] = da[-1] - da[-2]
    sat = config.saturation * np.tanh(slope / config.saturation)
    ramp = config.coupling * sat[:, None] * (QUARTER_OFFSETS[None, :] / 0.375)

    # a forecast surplus lowers intraday prices; a shortfall climbs the steep end of
    # the merit order, so it moves prices (1 + convexity) times as much
    surplus = err_solar / 1500.0 + err_wind / 1200.0 - err_load / 800.0
    response = surplus - config.convexity * np.maximum(-surplus, 0.0)
    err_term = -config.error_coupling * config.noise_scale * response

    scale = config.noise_scale * (1.0 + config.heteroscedasticity * np.abs(np.tanh(slope / config.saturation)))
    corr = config.quarter_corr ** np.abs(np.subtract.outer(np.arange(4), np.arange(4)))
    chol = np.linalg.cholesky(corr)
    g = rng.standard_normal((n, 4)) @ chol.T
    if math.isfinite(config.tail_df):
        mix = np.sqrt(config.tail_df / rng.chisquare(config.tail_df, size=n))
        w = g * mix[:, None]
    else:
        w = g

    d = np.empty((n, 4))
    mean = np.empty((n, 4))
    prev = np.zeros(4)
    for i in range(n):
        mean[i] = ramp[i] + config.ar * prev + err_term[i]
        d[i] = mean[i] + scale[i] * w[i]
        prev = d[i]

    oil = 65.0 + np.cumsum(0.8 * rng.standard_normal(int(config.days)))
    gas = 20.0 + np.cumsum(0.3 * rng.standard_normal(int(config.days)))
    quarter = {
        "solar_actual": solar_a,
        "solar_forecast": solar_f,
        "wind_actual": wind_a,
        "wind_forecast": wind_f,
        "load_actual": load_a,
        "load_forecast": load_f,
        "total_gen_forecast": total_gen,
        "import_export_forecast": imp_exp,
    }
    return MarketDataset(
        hours=hours,
        da=da,
        id3=da[:, None] + d,
        quarter=quarter,
        fuel={"oil": oil[day], "gas": gas[day]},
        truth=GroundTruth(mean=mean, scale=scale, corr=corr, df=float(config.tail_df)),
    )


def write_truth(ds: MarketDataset, path) -> None:
    if ds.truth is None:
        raise ValueError("dataset has no ground truth")
    obj = {"start": _fmt_time(ds.hours[0]), **ds.truth.to_json()}
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")
