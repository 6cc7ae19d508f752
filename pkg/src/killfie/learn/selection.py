"""Undersampling, stratified folds, inner grid search and nested cross-validation."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .._util import derive_seed
from .metrics import CvReport, metrics
from .models import ModelSpec, TrainedModel, train


class LeakageAudit:
    """Records which row indices each training-side stage touched, per fold."""

    def __init__(self):
        self.fold: int | None = None
        self.touched: dict[tuple[int | None, str], set[int]] = defaultdict(set)
        self.test_rows: dict[int, set[int]] = {}

    def record(self, stage: str, rows) -> None:
        self.touched[(self.fold, stage)].update(int(r) for r in np.asarray(rows).ravel())

    def violations(self) -> list[str]:
        out = []
        for (fold, stage), rows in sorted(self.touched.items(), key=lambda kv: (kv[0][0] or -1, kv[0][1])):
            if fold is None:
                continue
            leaked = rows & self.test_rows.get(fold, set())
            if leaked:
                out.append(f"fold {fold} stage {stage}: {len(leaked)} test rows touched")
        return out

    def stages(self) -> set[str]:
        return {stage for _, stage in self.touched}


def _check_binary(y) -> np.ndarray:
    y = np.asarray(y).astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return y


def undersample_indices(y, seed: int = 0, rows=None) -> np.ndarray:
    """Indices (into ``y``) of a class-balanced subset, in shuffled order.

    The majority class is subsampled without replacement down to the
    minority count; minority rows are all kept.
    """
    y = _check_binary(y)
    rows = np.arange(y.size) if rows is None else np.asarray(rows, dtype=np.int64)
    labels = y[rows]
    pos, neg = rows[labels == 1], rows[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("undersampling needs both classes present")
    rng = np.random.default_rng(seed & (2**64 - 1))
    if pos.size < neg.size:
        neg = np.sort(rng.choice(neg, size=pos.size, replace=False))
    elif neg.size < pos.size:
        pos = np.sort(rng.choice(pos, size=neg.size, replace=False))
    keep = np.concatenate([pos, neg])
    return keep[rng.permutation(keep.size)]


def undersample(X, y, seed: int = 0):
    idx = undersample_indices(y, seed)
    return np.asarray(X)[idx], np.asarray(y)[idx]


def stratified_kfold(y, k: int, seed: int = 0) -> list[np.ndarray]:
    """``k`` disjoint folds covering every index with near-proportional classes.

    Each class is shuffled, classes are laid end to end, and position ``i``
    goes to fold ``i mod k``; fold sizes and per-class counts then differ by
    at most one.
    """
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be at least 2")
    classes, counts = np.unique(y, return_counts=True)
    if (counts < k).any():
        small = {int(c): int(n) for c, n in zip(classes, counts) if n < k}
        raise ValueError(f"every class needs at least k={k} rows, got {small}")
    rng = np.random.default_rng(seed & (2**64 - 1))
    ordered = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in classes])
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(ordered):
        folds[pos % k].append(idx)
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


# ---------------------------------------------------------------------------
# featurizers: fitted on training rows only

class FittedFeaturizer(Protocol):
    columns: list[str]

    def transform(self, rows) -> np.ndarray: ...


class Featurizer(Protocol):
    def fit(self, rows, audit: LeakageAudit | None = None) -> FittedFeaturizer: ...


@dataclass
class Imputer:
    """Median imputation plus indicator columns for columns with gaps in training."""

    medians: np.ndarray
    indicator_cols: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Imputer":
        X = np.asarray(X, dtype=float)
        medians = np.zeros(X.shape[1])
        for j in range(X.shape[1]):
            col = X[:, j]
            ok = col[~np.isnan(col)]
            medians[j] = float(np.median(ok)) if ok.size else 0.0
        gaps = np.flatnonzero(np.isnan(X).any(axis=0)) if X.shape[0] else np.array([], dtype=np.int64)
        return cls(medians, gaps)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        miss = np.isnan(X)
        out = np.where(miss, self.medians, X)
        if self.indicator_cols.size:
            out = np.hstack([out, miss[:, self.indicator_cols].astype(float)])
        return out


@dataclass
class ArrayFeaturizer:
    X: np.ndarray
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if not self.columns:
            self.columns = [f"x{j}" for j in range(self.X.shape[1])]

    def fit(self, rows, audit: LeakageAudit | None = None) -> "_FittedArray":
        rows = np.asarray(rows)
        if audit is not None:
            audit.record("impute_fit", rows)
        imp = Imputer.fit(self.X[rows])
        cols = list(self.columns) + [f"{self.columns[j]}:missing" for j in imp.indicator_cols]
        return _FittedArray(self.X, imp, cols)


@dataclass
class _FittedArray:
    X: np.ndarray
    imputer: Imputer
    columns: list[str]

    def transform(self, rows) -> np.ndarray:
        return self.imputer.transform(self.X[np.asarray(rows)])


# ---------------------------------------------------------------------------
# grid search and nested CV

def _accuracy(model: TrainedModel, X, y) -> float:
    return float(np.mean(model.predict(X) == y))


def _score_grid(grid: Sequence[ModelSpec], X_tr, y_tr, X_te, y_te) -> list[float]:
    """Held-out accuracy per spec; a failing spec scores 0.

    Forests that differ only in ``n_trees`` are grown once at the largest
    size and scored on their prefixes, which are identical models since the
    trees of a forest are seeded by position.
    """
    scores = [0.0] * len(grid)
    forests: dict[tuple, list[int]] = defaultdict(list)
    for i, spec in enumerate(grid):
        if spec.family == "RandomForest":
            key = (tuple((k, v) for k, v in spec.params if k != "n_trees"), spec.seed)
            forests[key].append(i)
            continue
        try:
            scores[i] = _accuracy(train(spec, X_tr, y_tr), X_te, y_te)
        except Exception:
            scores[i] = 0.0
    for members in forests.values():
        biggest = max(members, key=lambda i: grid[i].hp["n_trees"])
        try:
            model = train(grid[biggest], X_tr, y_tr)
        except Exception:
            continue
        for i in members:
            scores[i] = _accuracy(model.truncated(grid[i].hp["n_trees"]), X_te, y_te)
    return scores


def grid_search_scores(grid: Sequence[ModelSpec], X, y, inner_k: int = 3, seed: int = 0) -> list[float]:
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    totals = np.zeros(len(grid))
    folds = stratified_kfold(y, inner_k, seed)
    for i, test in enumerate(folds):
        tr = np.concatenate([f for j, f in enumerate(folds) if j != i])
        totals += _score_grid(grid, X[tr], y[tr], X[test], y[test])
    return (totals / inner_k).tolist()


def grid_search(grid: Sequence[ModelSpec], X, y, inner_k: int = 3, seed: int = 0) -> ModelSpec:
    """Spec with the best mean inner-CV accuracy; ties go to the earlier spec."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if len(grid) == 1:
        return grid[0]
    scores = grid_search_scores(grid, X, y, inner_k, seed)
    return grid[int(np.argmax(scores))]


def cross_validate(grid: ModelSpec | Sequence[ModelSpec], X, y, k: int = 10, seed: int = 0,
                   featurizer: Featurizer | None = None, inner_k: int = 3,
                   audit: LeakageAudit | None = None, undersample_train: bool = True) -> CvReport:
    """Stratified k-fold CV with leakage-free preprocessing.

    Per fold: undersample the training rows, fit the featurizer on them,
    grid-search on them, refit the winner and score the untouched test fold.
    ``X`` is a numeric matrix unless a ``featurizer`` is supplied, in which
    case rows are addressed by index only.
    """
    grid = [grid] if isinstance(grid, ModelSpec) else list(grid)
    y = _check_binary(y)
    if featurizer is None:
        featurizer = ArrayFeaturizer(X)
    folds = stratified_kfold(y, k, derive_seed(seed, "outer"))
    fold_metrics, chosen = [], []
    for f, test in enumerate(folds):
        train_rows = np.concatenate([t for j, t in enumerate(folds) if j != f])
        if audit is not None:
            audit.fold = f
            audit.test_rows[f] = set(test.tolist())
        if undersample_train:
            if audit is not None:
                audit.record("undersample", train_rows)
            train_rows = undersample_indices(y, derive_seed(seed, "undersample", f), rows=train_rows)
        fitted = featurizer.fit(train_rows, audit=audit)
        X_tr = fitted.transform(train_rows)
        y_tr = y[train_rows]
        if audit is not None:
            audit.record("grid_search", train_rows)
        best = grid_search(grid, X_tr, y_tr, inner_k, derive_seed(seed, "inner", f))
        if audit is not None:
            audit.record("train", train_rows)
            if best.family == "LinearSVM" or (best.family == "KNN" and best.hp["standardize"]):
                audit.record("standardize", train_rows)
        model = train(best, X_tr, y_tr)
        X_te = fitted.transform(test)
        fold_metrics.append(metrics(y[test], model.predict(X_te)))
        chosen.append(best)
    if audit is not None:
        audit.fold = None
    return CvReport(fold_metrics, chosen)
