"""Gradient-boosted regression trees and exact path-dependent TreeSHAP."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateTargetError, DimensionMismatchError, EmptyTestSetError, TooFewSamplesError

MIN_ROWS = 50
LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    """Flat node arrays; a node goes left when ``x[feature] <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, j: int) -> bool:
        return self.feature[j] == LEAF

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            active = f != LEAF
            if not active.any():
                return self.value[node]
            rows = np.nonzero(active)[0]
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def expected_value(self) -> float:
        leaves = self.feature == LEAF
        return float(np.sum(self.value[leaves] * self.cover[leaves]) / self.cover[0])

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f != LEAF}

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "cover")}

    @classmethod
    def from_json(cls, obj: dict) -> "RegressionTree":
        ints = ("feature", "left", "right")
        return cls(**{k: np.array(v, dtype=np.int64 if k in ints else np.float64) for k, v in obj.items()})


def leaf_tree(value: float, cover: float) -> RegressionTree:
    return RegressionTree(
        np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]), np.array([float(value)]), np.array([float(cover)])
    )


def _best_split(X: np.ndarray, r: np.ndarray, min_leaf: int):
    """Greedy variance-reduction split: ``(gain, feature, threshold)`` or None."""
    m = len(r)
    if m < 2 * min_leaf:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    cs = np.cumsum(r[order], axis=0)[:-1]
    total = r.sum()
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    gain = cs**2 / nl + (total - cs) ** 2 / (m - nl) - total**2 / m
    ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (m - nl >= min_leaf)
    gain = np.where(ok, gain, -np.inf)
    k = int(np.argmax(gain.T))  # feature-major so ties pick the lowest feature, then position
    f, pos = divmod(k, m - 1)
    g = gain[pos, f]
    scale = max(float(np.sum(r * r)), 1.0)
    if not np.isfinite(g) or g <= 1e-12 * scale:
        return None
    return g, f, 0.5 * (xs[pos, f] + xs[pos + 1, f])


def fit_tree(X, r, max_depth: int = 3, min_leaf: int = 1) -> RegressionTree:
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def build(idx, depth):
        j = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(r[idx].mean()))
        cover.append(float(len(idx)))
        split = _best_split(X[idx], r[idx], min_leaf) if depth < max_depth else None
        if split is None:
            return j
        _, f, t = split
        mask = X[idx, f] <= t
        feature[j], threshold[j] = f, t
        left[j] = build(idx[mask], depth + 1)
        right[j] = build(idx[~mask], depth + 1)
        return j

    build(np.arange(len(r)), 0)
    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
        np.array(cover),
    )


@dataclass(frozen=True)
class GbtModel:
    base: float
    trees: tuple[RegressionTree, ...]
    learning_rate: float
    max_depth: int
    n_features: int
    metadata: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionMismatchError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(len(X), self.base)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def expected_value(self) -> float:
        return self.base + self.learning_rate * sum(t.expected_value() for t in self.trees)

    def to_json(self) -> dict:
        return {
            "format": "deltaflow.gbt",
            "version": 1,
            "base": self.base,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "n_features": self.n_features,
            "trees": [t.to_json() for t in self.trees],
        }


def fit_gbt(X, y, trees: int = 100, depth: int = 3, lr: float = 0.1, seed=0, subsample: float = 1.0, min_leaf: int = 1) -> GbtModel:
    """Least-squares boosting; ``seed`` only matters when ``subsample < 1``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) < MIN_ROWS:
        raise TooFewSamplesError(f"boosting needs at least {MIN_ROWS} rows, got {len(y)}")
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatchError("features and target lengths differ")
    if not np.all(np.isfinite(y)):
        raise DegenerateTargetError("target contains NaN or Inf")
    rng = np.random.default_rng(seed)
    base = float(y.mean())
    pred = np.full(len(y), base)
    fitted = []
    for _ in range(trees):
        resid = y - pred
        if subsample < 1.0:
            idx = np.sort(rng.choice(len(y), size=max(2, int(subsample * len(y))), replace=False))
            tree = fit_tree(X[idx], resid[idx], depth, min_leaf)
        else:
            tree = fit_tree(X, resid, depth, min_leaf)
        fitted.append(tree)
        pred += lr * tree.predict(X)
    return GbtModel(base, tuple(fitted), lr, depth, X.shape[1], {"seed": seed, "subsample": subsample})


# --------------------------------------------------------------------------- #
# TreeSHAP, vectorized over rows. The path's feature sequence depends only on
# the tree; the one-fractions depend on the row, so they are (rows,) arrays.


def _extend(feat, zero, one, pw, pz, po, pi):
    d = len(feat)
    rows = pw.shape[1]
    feat = feat + [pi]
    zero = np.vstack([zero, np.broadcast_to(pz, (1, rows))])
    one = np.vstack([one, np.broadcast_to(po, (1, rows))])
    pw = np.vstack([pw, np.full((1, rows), 1.0 if d == 0 else 0.0)])
    for i in range(d - 1, -1, -1):
        pw[i + 1] += one[d] * pw[i] * (i + 1) / (d + 1)
        pw[i] = zero[d] * pw[i] * (d - i) / (d + 1)
    return feat, zero, one, pw


def _unwind(feat, zero, one, pw, k):
    d = len(feat) - 1
    o, z = one[k], zero[k]
    has_one = o != 0
    safe_o = np.where(has_one, o, 1.0)
    nxt = pw[d].copy()
    new = pw.copy()
    for i in range(d - 1, -1, -1):
        with_one = nxt * (d + 1) / ((i + 1) * safe_o)
        without = pw[i] * (d + 1) / (z * (d - i))
        new[i] = np.where(has_one, with_one, without)
        nxt = np.where(has_one, pw[i] - with_one * z * (d - i) / (d + 1), nxt)
    keep = [i for i in range(d + 1) if i != k]
    return [feat[i] for i in keep], zero[keep], one[keep], new[:d]


def _unwound_sum(zero, one, pw, k):
    d = pw.shape[0] - 1
    o, z = one[k], zero[k]
    has_one = o != 0
    safe_o = np.where(has_one, o, 1.0)
    nxt = pw[d].copy()
    total = np.zeros_like(nxt)
    for i in range(d - 1, -1, -1):
        tmp = nxt * (d + 1) / ((i + 1) * safe_o)
        total += np.where(has_one, tmp, pw[i] / z / ((d - i) / (d + 1)))
        nxt = np.where(has_one, pw[i] - tmp * z * (d - i) / (d + 1), nxt)
    return total


def tree_shap_tree(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    """SHAP values of one tree for every row of ``X``; shape (rows, features)."""
    rows, p = X.shape
    phi = np.zeros((rows, p))

    def recurse(j, feat, zero, one, pw, pz, po, pi):
        feat, zero, one, pw = _extend(feat, zero, one, pw, pz, po, pi)
        if tree.feature[j] == LEAF:
            for i in range(1, len(feat)):
                w = _unwound_sum(zero, one, pw, i)
                phi[:, feat[i]] += w * (one[i] - zero[i]) * tree.value[j]
            return
        f = int(tree.feature[j])
        a, b = tree.left[j], tree.right[j]
        goes_left = (X[:, f] <= tree.threshold[j]).astype(np.float64)
        iz, io = 1.0, np.ones(rows)
        if f in feat:
            k = feat.index(f)
            iz, io = zero[k, 0], one[k].copy()
            feat, zero, one, pw = _unwind(feat, zero, one, pw, k)
        c = tree.cover[j]
        recurse(a, feat, zero, one, pw, iz * tree.cover[a] / c, io * goes_left, f)
        recurse(b, feat, zero, one, pw, iz * tree.cover[b] / c, io * (1.0 - goes_left), f)

    empty = np.zeros((0, rows))
    recurse(0, [], empty, empty, empty, 1.0, np.ones(rows), -1)
    return phi


@dataclass(frozen=True)
class ShapAttribution:
    phi0: float
    phi: np.ndarray  # (features,) or (rows, features)

    def total(self):
        return self.phi0 + self.phi.sum(axis=-1)


def tree_shap(model: GbtModel, x) -> ShapAttribution:
    """Exact path-dependent SHAP values for one row or a batch of rows."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    X = np.atleast_2d(arr)
    if X.shape[1] != model.n_features:
        raise DimensionMismatchError(f"expected {model.n_features} features, got {X.shape[1]}")
    phi = np.zeros(X.shape)
    for t in model.trees:
        if t.n_nodes > 1:
            phi += model.learning_rate * tree_shap_tree(t, X)
    return ShapAttribution(model.expected_value(), phi[0] if single else phi)


def feature_importance(model: GbtModel, X, reduce: str = "mean", attribution: ShapAttribution | None = None) -> np.ndarray:
    """Per-feature mean (or sum) of absolute SHAP values over the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) == 0:
        raise EmptyTestSetError("feature importance needs at least one test row")
    phi = np.abs((attribution or tree_shap(model, X)).phi)
    if reduce == "mean":
        return phi.mean(axis=0)
    if reduce == "sum":
        return phi.sum(axis=0)
    raise ValueError(f"unknown reduction {reduce!r}")


# --------------------------------------------------------------------------- #
# report


@dataclass
class ShapReport:
    names: list[str]
    groups: list[str]
    labels: list[str]
    importance: np.ndarray  # (features, 4)
    r2: np.ndarray  # held-out R^2 per target dimension
    train_days: list[str]
    test_days: list[str]

    def group_table(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for g, row in zip(self.groups, self.importance):
            out[g] = out.get(g, 0.0) + row
        return out

    def write_csv(self, path, group: str | None = None) -> None:
        # imported here to avoid a dependency cycle with the feature module
        from .dataset import QUARTERS

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "label", "group"] + [f"fi_q{q}" for q in QUARTERS])
            for name, label, g, row in zip(self.names, self.labels, self.groups, self.importance):
                if group is None or g == group:
                    w.writerow([name, label, g] + [repr(float(v)) for v in row])


def split_days(days: Sequence[str], seed, train_share: float = 0.8) -> tuple[list[str], list[str]]:
    """Seeded shuffle of distinct days; each side is returned in chronological order."""
    uniq = sorted(set(days))
    perm = np.random.default_rng(seed).permutation(len(uniq))
    n_train = int(round(train_share * len(uniq)))
    train = sorted(uniq[i] for i in perm[:n_train])
    test = sorted(uniq[i] for i in perm[n_train:])
    return train, test


def shap_report(ds, features="all", seed=0, trees: int = 100, depth: int = 3, lr: float = 0.1, train_share: float = 0.8, reduce: str = "mean") -> ShapReport:
    from .dataset import build_delta_series
    from .features import LABELS, build_feature_matrix, group_of, resolve_features

    names = resolve_features(features)
    rows, X, names = build_feature_matrix(ds, names)
    target = build_delta_series(ds).values[rows]
    days = [str(h)[:10] for h in ds.hours[rows]]
    train_days, test_days = split_days(days, seed, train_share)
    in_train = np.isin(days, train_days)
    if not (~in_train).any():
        raise EmptyTestSetError("day split left no test rows")
    fi = np.zeros((len(names), target.shape[1]))
    r2 = np.zeros(target.shape[1])
    for d in range(target.shape[1]):
        model = fit_gbt(X[in_train], target[in_train, d], trees, depth, lr, seed)
        Xt, yt = X[~in_train], target[~in_train, d]
        fi[:, d] = feature_importance(model, Xt, reduce)
        resid = yt - model.predict(Xt)
        r2[d] = 1.0 - resid.var() / yt.var() if yt.var() > 0 else 0.0
    return ShapReport(names, [group_of(n) for n in names], [LABELS.get(n, n) for n in names], fi, r2, train_days, test_days)
