from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalMetrics:
    """Scores for one prediction set.

    ``precision``/``recall``/``f1`` are for the positive class; ``macro``
    and ``weighted`` hold the two usual averages over both classes.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    macro: ClassScores
    weighted: ClassScores
    per_class: dict[int, ClassScores]
    confusion: dict[str, int]
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def cs(c: ClassScores):
            return {"precision": c.precision, "recall": c.recall, "f1": c.f1, "support": c.support}

        return {
            "accuracy": self.accuracy,
            "positive": {"precision": self.precision, "recall": self.recall, "f1": self.f1},
            "macro": cs(self.macro),
            "weighted": cs(self.weighted),
            "per_class": {str(k): cs(v) for k, v in self.per_class.items()},
            "confusion": dict(self.confusion),
            "flags": list(self.flags),
        }


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def metrics(y_true, y_pred, positive_class: int = 1) -> EvalMetrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    classes = sorted({0, 1} | set(np.unique(y_true).tolist()) | set(np.unique(y_pred).tolist()))
    flags: list[str] = []
    per_class: dict[int, ClassScores] = {}
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        pred_c = int(np.sum(y_pred == c))
        true_c = int(np.sum(y_true == c))
        if pred_c == 0:
            flags.append(f"no_predictions_for_class_{c}")
        prec = tp / pred_c if pred_c else 0.0
        rec = tp / true_c if true_c else 0.0
        per_class[c] = ClassScores(prec, rec, _f1(prec, rec), true_c)
    total = int(y_true.size)
    acc = float(np.mean(y_true == y_pred)) if total else 0.0
    macro = ClassScores(
        float(np.mean([s.precision for s in per_class.values()])),
        float(np.mean([s.recall for s in per_class.values()])),
        float(np.mean([s.f1 for s in per_class.values()])),
        total,
    )
    if total:
        w = {c: s.support / total for c, s in per_class.items()}
        weighted = ClassScores(
            sum(w[c] * s.precision for c, s in per_class.items()),
            sum(w[c] * s.recall for c, s in per_class.items()),
            sum(w[c] * s.f1 for c, s in per_class.items()),
            total,
        )
    else:
        weighted = ClassScores(0.0, 0.0, 0.0, 0)
    pos = per_class[positive_class]
    neg = [c for c in classes if c != positive_class][0]
    confusion = {
        "tp": int(np.sum((y_pred == positive_class) & (y_true == positive_class))),
        "fp": int(np.sum((y_pred == positive_class) & (y_true != positive_class))),
        "fn": int(np.sum((y_pred != positive_class) & (y_true == positive_class))),
        "tn": int(np.sum((y_pred == neg) & (y_true == neg))),
    }
    return EvalMetrics(acc, pos.precision, pos.recall, pos.f1, macro, weighted, per_class, confusion, tuple(flags))


@dataclass(frozen=True)
class MeanSd:
    mean: float
    sd: float


@dataclass
class CvReport:
    folds: list[EvalMetrics]
    chosen: list = field(default_factory=list)

    def _agg(self, get) -> MeanSd:
        vals = [get(m) for m in self.folds]
        sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return MeanSd(float(np.mean(vals)), float(sd))

    @property
    def accuracy(self) -> MeanSd:
        return self._agg(lambda m: m.accuracy)

    def summary(self) -> dict:
        out = {}
        for name, get in [
            ("accuracy", lambda m: m.accuracy),
            ("precision", lambda m: m.precision),
            ("recall", lambda m: m.recall),
            ("f1", lambda m: m.f1),
            ("macro_precision", lambda m: m.macro.precision),
            ("macro_recall", lambda m: m.macro.recall),
            ("macro_f1", lambda m: m.macro.f1),
            ("weighted_precision", lambda m: m.weighted.precision),
            ("weighted_recall", lambda m: m.weighted.recall),
            ("weighted_f1", lambda m: m.weighted.f1),
        ]:
            agg = self._agg(get)
            out[name] = {"mean": agg.mean, "sd": agg.sd}
        return out

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "folds": [m.to_dict() for m in self.folds],
            "chosen": [c.to_dict() for c in self.chosen],
        }
