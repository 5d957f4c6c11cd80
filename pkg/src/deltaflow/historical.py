"""Hour-of-day matched random selection of past difference vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, EmptyBucketError, ModelFormatError

HOURS_PER_DAY = 24


@dataclass(frozen=True)
class HistoryIndex:
    """Training difference vectors bucketed by UTC hour of day."""

    buckets: dict[int, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def bucket(self, hour_of_day: int) -> np.ndarray:
        b = self.buckets.get(int(hour_of_day))
        if b is None or len(b) == 0:
            raise EmptyBucketError(f"no training vectors for hour of day {hour_of_day}")
        return b

    @property
    def size(self) -> int:
        return sum(len(b) for b in self.buckets.values())

    def to_json(self) -> dict:
        return {
            "format": "deltaflow.history",
            "version": 1,
            "buckets": {str(h): b.tolist() for h, b in sorted(self.buckets.items())},
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HistoryIndex":
        if obj.get("format") != "deltaflow.history" or obj.get("version") != 1:
            raise ModelFormatError("not a version-1 history index")
        buckets = {int(h): np.array(v, dtype=np.float64).reshape(-1, 4) for h, v in obj["buckets"].items()}
        return cls(buckets, dict(obj.get("metadata", {})))


def build_index(hour_of_day, deltas) -> HistoryIndex:
    hod = np.asarray(hour_of_day, dtype=np.int64)
    d = np.asarray(deltas, dtype=np.float64)
    if d.ndim != 2 or len(d) != len(hod):
        raise DimensionMismatchError("need one difference vector per hour")
    buckets = {}
    for h in range(HOURS_PER_DAY):
        rows = d[hod == h]
        if len(rows):
            rows = rows.copy()
            rows.setflags(write=False)
            buckets[h] = rows
    return HistoryIndex(buckets)


def sample_multivariate(index: HistoryIndex, hour_of_day: int, n: int, seed=None) -> np.ndarray:
    b = index.bucket(hour_of_day)
    rng = np.random.default_rng(seed)
    return b[rng.integers(0, len(b), size=n)]


def sample_univariate(index: HistoryIndex, hour_of_day: int, n: int, seed=None) -> np.ndarray:
    b = index.bucket(hour_of_day)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(b), size=(n, b.shape[1]))
    return np.take_along_axis(b, idx, axis=0)


@dataclass(frozen=True)
class HistoricalModel:
    index: HistoryIndex
    variant: str = "multi"

    def __post_init__(self):
        if self.variant not in ("multi", "uni"):
            raise ValueError(f"unknown variant {self.variant!r}")

    def sample_hours(self, hours_of_day, n: int, seed=None) -> np.ndarray:
        """Draws for a sequence of hours, shape (hours, n, 4); one generator for the whole run."""
        rng = np.random.default_rng(seed)
        draw = sample_multivariate if self.variant == "multi" else sample_univariate
        return np.stack([draw(self.index, h, n, rng) for h in hours_of_day])

    def to_json(self) -> dict:
        return {"format": "deltaflow.historical", "version": 1, "variant": self.variant, "index": self.index.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "HistoricalModel":
        if obj.get("format") != "deltaflow.historical" or obj.get("version") != 1:
            raise ModelFormatError("not a version-1 historical model")
        return cls(HistoryIndex.from_json(obj["index"]), obj["variant"])
