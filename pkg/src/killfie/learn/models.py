"""Decision tree, random forest, k-nearest-neighbours and linear SVM classifiers.

Labels are binary ``{0, 1}`` with 1 the positive (dangerous) class. Every
family serializes to plain JSON.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .._util import derive_seed
from . import _kernels

FAMILIES = ("DecisionTree", "RandomForest", "KNN", "LinearSVM")
FAMILY_ALIASES = {
    "dt": "DecisionTree", "tree": "DecisionTree", "decisiontree": "DecisionTree",
    "rf": "RandomForest", "forest": "RandomForest", "randomforest": "RandomForest",
    "knn": "KNN", "nn": "KNN",
    "svm": "LinearSVM", "linearsvm": "LinearSVM",
}

_DEFAULTS: dict[str, dict[str, Any]] = {
    "DecisionTree": {"max_depth": None, "min_samples_leaf": 1},
    "RandomForest": {"n_trees": 100, "max_features": "sqrt", "max_depth": None,
                     "min_samples_leaf": 1, "bootstrap": True},
    "KNN": {"k": 5, "standardize": True},
    "LinearSVM": {"lam": 1e-3, "epochs": 50},
}


class InvalidHyperparameter(ValueError):
    pass


def canonical_family(name: str) -> str:
    if name in FAMILIES:
        return name
    try:
        return FAMILY_ALIASES[name.lower()]
    except KeyError:
        raise InvalidHyperparameter(f"unknown model family {name!r}") from None


def _check(family: str, params: dict[str, Any]) -> None:
    def positive_int(name, allow_none=False):
        v = params[name]
        if v is None and allow_none:
            return
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
            raise InvalidHyperparameter(f"{family}.{name} must be a positive integer, got {v!r}")

    if family in ("DecisionTree", "RandomForest"):
        positive_int("max_depth", allow_none=True)
        positive_int("min_samples_leaf")
    if family == "RandomForest":
        positive_int("n_trees")
        mf = params["max_features"]
        if not (mf in ("sqrt", "log2", "all") or (isinstance(mf, int) and not isinstance(mf, bool) and mf >= 1)):
            raise InvalidHyperparameter(f"RandomForest.max_features must be sqrt, log2, all or an int, got {mf!r}")
        if not isinstance(params["bootstrap"], bool):
            raise InvalidHyperparameter("RandomForest.bootstrap must be a bool")
    if family == "KNN":
        positive_int("k")
        if not isinstance(params["standardize"], bool):
            raise InvalidHyperparameter("KNN.standardize must be a bool")
    if family == "LinearSVM":
        lam = params["lam"]
        if not isinstance(lam, (int, float)) or isinstance(lam, bool) or not lam > 0 or not math.isfinite(lam):
            raise InvalidHyperparameter(f"LinearSVM.lam must be a positive number, got {lam!r}")
        positive_int("epochs")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: tuple[tuple[str, Any], ...] = ()
    seed: int = 0

    def __post_init__(self):
        family = canonical_family(self.family)
        given = dict(self.params)
        unknown = set(given) - set(_DEFAULTS[family])
        if unknown:
            raise InvalidHyperparameter(f"{family} does not take {sorted(unknown)}")
        merged = {**_DEFAULTS[family], **given}
        _check(family, merged)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", tuple(sorted(merged.items())))

    @classmethod
    def make(cls, family: str, seed: int = 0, **params) -> "ModelSpec":
        return cls(family, tuple(params.items()), seed)

    @property
    def hp(self) -> dict[str, Any]:
        return dict(self.params)

    def replace(self, **params) -> "ModelSpec":
        return ModelSpec(self.family, tuple({**self.hp, **params}.items()), self.seed)

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.family, self.params, seed)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.hp, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["family"], tuple(d.get("params", {}).items()), int(d.get("seed", 0)))

    def label(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self.params)
        return f"{self.family}({inner})"


def default_grid(family: str, seed: int = 0) -> list[ModelSpec]:
    family = canonical_family(family)
    if family == "DecisionTree":
        return [ModelSpec.make(family, seed, max_depth=d) for d in (3, 5, 10, None)]
    if family == "RandomForest":
        return [ModelSpec.make(family, seed, n_trees=t, max_features=f)
                for t in (50, 100, 200) for f in ("sqrt", "log2")]
    if family == "KNN":
        return [ModelSpec.make(family, seed, k=k) for k in (3, 5, 7, 11)]
    return [ModelSpec.make(family, seed, lam=lam) for lam in (1e-4, 1e-3, 1e-2, 1e-1)]


# ---------------------------------------------------------------------------
# standardization

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def standardize_fit(X: np.ndarray) -> Standardizer:
    """Column mean/sd from training rows; constant columns get scale 1."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return Standardizer(mean, sd)


def _as_xy(X, y=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.isfinite(X).all():
        raise ValueError("X contains missing or non-finite values; impute first")
    if y is None:
        return X
    y = np.asarray(y).astype(np.int64)
    if y.shape != (X.shape[0],):
        raise ValueError("y length does not match X rows")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return X, y


# ---------------------------------------------------------------------------
# models

@dataclass
class TreeModel:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_pos: np.ndarray
    n_tot: np.ndarray

    @classmethod
    def fit(cls, X, y, rows=None, max_depth=None, min_samples_leaf=1, max_features=None, seed=0) -> "TreeModel":
        rows = np.arange(X.shape[0], dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
        mf = X.shape[1] if max_features is None else int(max_features)
        arrays = _kernels.build_tree(
            X, y, rows, -1 if max_depth is None else int(max_depth), int(min_samples_leaf), mf,
            np.uint64(seed & (2**64 - 1)),
        )
        return cls(*arrays)

    def predict(self, X) -> np.ndarray:
        return _kernels.tree_leaf_positive(X, self.feature, self.threshold, self.left, self.right,
                                           self.n_pos, self.n_tot)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
            "left": self.left.tolist(), "right": self.right.tolist(),
            "n_pos": self.n_pos.tolist(), "n_tot": self.n_tot.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["n_pos"], np.int64), np.asarray(d["n_tot"], np.int64))


def features_per_split(rule, p: int) -> int:
    if rule == "all":
        return p
    if rule == "sqrt":
        return max(1, int(math.sqrt(p)))
    if rule == "log2":
        return max(1, int(math.log2(p))) if p > 1 else 1
    return min(p, int(rule))


@dataclass
class TrainedModel:
    spec: ModelSpec
    n_features: int
    trees: list[TreeModel] = field(default_factory=list)
    standardizer: Standardizer | None = None
    train_X: np.ndarray | None = None
    train_y: np.ndarray | None = None
    weights: np.ndarray | None = None
    objective_history: list[float] = field(default_factory=list)
    raw_objective_history: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        X = _as_xy(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {X.shape[1]}")
        fam = self.spec.family
        if fam in ("DecisionTree", "RandomForest"):
            return _forest_vote(self.trees, X)
        if fam == "KNN":
            return _knn_predict(self, X)
        Z = self.standardizer.transform(X)
        scores = Z @ self.weights[:-1] + self.weights[-1]
        return (scores > 0).astype(np.int64)

    def truncated(self, n_trees: int) -> "TrainedModel":
        """The same forest cut to its first ``n_trees`` trees."""
        spec = self.spec.replace(n_trees=n_trees)
        return TrainedModel(spec, self.n_features, trees=self.trees[:n_trees])

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"spec": self.spec.to_dict(), "n_features": self.n_features}
        if self.trees:
            d["trees"] = [t.to_dict() for t in self.trees]
        if self.standardizer is not None:
            d["standardizer"] = {"mean": self.standardizer.mean.tolist(), "scale": self.standardizer.scale.tolist()}
        if self.train_X is not None:
            d["train_X"] = self.train_X.tolist()
            d["train_y"] = self.train_y.tolist()
        if self.weights is not None:
            d["weights"] = self.weights.tolist()
            d["objective_history"] = list(self.objective_history)
            d["raw_objective_history"] = list(self.raw_objective_history)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        std = d.get("standardizer")
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            n_features=int(d["n_features"]),
            trees=[TreeModel.from_dict(t) for t in d.get("trees", [])],
            standardizer=None if std is None else Standardizer(np.asarray(std["mean"]), np.asarray(std["scale"])),
            train_X=None if "train_X" not in d else np.asarray(d["train_X"], float),
            train_y=None if "train_y" not in d else np.asarray(d["train_y"], np.int64),
            weights=None if "weights" not in d else np.asarray(d["weights"], float),
            objective_history=list(d.get("objective_history", [])),
            raw_objective_history=list(d.get("raw_objective_history", [])),
        )


def _forest_vote(trees: list[TreeModel], X: np.ndarray) -> np.ndarray:
    votes = np.zeros(X.shape[0], np.int64)
    for t in trees:
        votes += t.predict(X)
    # strict majority; a tie goes to the negative class
    return (2 * votes > len(trees)).astype(np.int64)


def _knn_predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    k = min(model.spec.hp["k"], model.train_X.shape[0])
    train = model.train_X
    if model.standardizer is not None:
        X = model.standardizer.transform(X)
    out = np.empty(X.shape[0], np.int64)
    for r in range(X.shape[0]):
        d2 = ((train - X[r]) ** 2).sum(axis=1)
        nearest = np.argsort(d2, kind="stable")[:k]
        pos = int(model.train_y[nearest].sum())
        out[r] = 1 if 2 * pos > k else 0
    return out


def train(spec: ModelSpec, X, y) -> TrainedModel:
    """Fit one model. ``X`` must already be imputed (no NaN)."""
    X, y = _as_xy(X, y)
    if X.shape[0] == 0:
        raise ValueError("cannot train on zero rows")
    hp = spec.hp
    fam = spec.family
    n, p = X.shape
    if fam == "DecisionTree":
        tree = TreeModel.fit(X, y, None, hp["max_depth"], hp["min_samples_leaf"], None, spec.seed)
        return TrainedModel(spec, p, trees=[tree])
    if fam == "RandomForest":
        mf = features_per_split(hp["max_features"], p)
        trees = []
        for t in range(hp["n_trees"]):
            tseed = derive_seed(spec.seed, "tree", t)
            if hp["bootstrap"]:
                rows = np.random.default_rng(tseed).integers(0, n, size=n)
            else:
                rows = np.arange(n)
            trees.append(TreeModel.fit(X, y, rows, hp["max_depth"], hp["min_samples_leaf"], mf,
                                       derive_seed(tseed, "features")))
        return TrainedModel(spec, p, trees=trees)
    if fam == "KNN":
        std = standardize_fit(X) if hp["standardize"] else None
        train_X = std.transform(X) if std is not None else X.copy()
        return TrainedModel(spec, p, standardizer=std, train_X=train_X, train_y=y.copy())
    # LinearSVM
    std = standardize_fit(X)
    Z = np.hstack([std.transform(X), np.ones((n, 1))])
    rng = np.random.default_rng(derive_seed(spec.seed, "svm"))
    perms = np.stack([rng.permutation(n) for _ in range(hp["epochs"])]).astype(np.int64)
    w, objective, raw = _kernels.pegasos(np.ascontiguousarray(Z), (2 * y - 1).astype(np.float64),
                                    float(hp["lam"]), int(hp["epochs"]), perms)
    return TrainedModel(spec, p, standardizer=std, weights=w, objective_history=objective.tolist(),
                        raw_objective_history=raw.tolist())


def hinge_objective(model: TrainedModel, X, y) -> float:
    X, y = _as_xy(X, y)
    Z = np.hstack([model.standardizer.transform(X), np.ones((X.shape[0], 1))])
    return float(_kernels.hinge_objective(Z, (2 * y - 1).astype(np.float64), model.weights, model.spec.hp["lam"]))
