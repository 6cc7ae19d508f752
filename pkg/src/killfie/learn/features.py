"""Feature blocks, the seven block configurations, and per-risk datasets."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..corpus import AnnotationRecord, Label, RiskReason
from ..geofeat import ELEVATION_COLUMNS, LOCATION_COLUMNS, ROAD_RAIL_COLUMNS, WATER_COLUMNS
from ..textfeat import EmptyCorpusError, Vocabulary, embed, fit_vocab, tfidf
from .selection import Imputer, LeakageAudit

BLOCKS = ("text", "image", "location")

# row labels and block sets in the order of the classic comparison table
TABLE4_CONFIGS: tuple[tuple[str, frozenset[str]], ...] = (
    ("Image Only", frozenset({"image"})),
    ("Text Only", frozenset({"text"})),
    ("Location Only", frozenset({"location"})),
    ("Image + Location", frozenset({"image", "location"})),
    ("Text + Location", frozenset({"text", "location"})),
    ("Text + Image", frozenset({"text", "image"})),
    ("Text + Image + Location", frozenset({"text", "image", "location"})),
)


def parse_blocks(spec: str | Iterable[str]) -> frozenset[str]:
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    blocks = frozenset(b.strip().lower() for b in items if b.strip())
    bad = blocks - set(BLOCKS)
    if bad:
        raise ValueError(f"unknown feature blocks {sorted(bad)}")
    return blocks


def block_of(column: str) -> str:
    prefix = column.split(":", 1)[0]
    return {"text": "text", "image": "image", "loc": "location"}.get(prefix, prefix)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    missing: np.ndarray | None = None

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column names do not match matrix width")
        if self.missing is None:
            object.__setattr__(self, "missing", np.isnan(self.values))


@dataclass(frozen=True)
class ColumnSelector:
    blocks: frozenset[str]
    location_columns: tuple[str, ...] = LOCATION_COLUMNS

    def keep(self, column: str) -> bool:
        block = block_of(column)
        if block not in self.blocks:
            return False
        if block == "location":
            name = column.split(":", 2)[1]
            return name in self.location_columns
        return True

    def indices(self, columns: Sequence[str]) -> list[int]:
        return [i for i, c in enumerate(columns) if self.keep(c)]

    def __call__(self, fm: FeatureMatrix) -> FeatureMatrix:
        idx = self.indices(fm.columns)
        return FeatureMatrix(fm.values[:, idx], tuple(fm.columns[i] for i in idx), fm.missing[:, idx])


def feature_config(blocks: str | Iterable[str]) -> ColumnSelector:
    chosen = parse_blocks(blocks)
    if not chosen:
        raise ValueError("a feature configuration needs at least one block")
    return ColumnSelector(chosen)


# ---------------------------------------------------------------------------
# per-tweet raw features

@dataclass(frozen=True)
class TextConfig:
    min_df: int = 2
    max_features: int = 20_000
    reduce_to: int = 500
    embed_dim: int = 100
    seed: int = 0

    @classmethod
    def from_dict(cls, d: Mapping) -> "TextConfig":
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SelfieDataset:
    """Everything needed to vectorize one set of tweets.

    ``location`` is ``n x 8`` in :data:`LOCATION_COLUMNS` order with NaN for
    missing slots. ``caption_tokens[i]`` is ``None`` when captions are absent.
    """

    ids: tuple[str, ...]
    text_tokens: tuple[tuple[str, ...], ...]
    caption_tokens: tuple[tuple[str, ...] | None, ...]
    location: np.ndarray
    labels: np.ndarray | None = None
    location_columns: tuple[str, ...] = LOCATION_COLUMNS

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, rows) -> "SelfieDataset":
        rows = [int(r) for r in rows]
        return SelfieDataset(
            tuple(self.ids[r] for r in rows),
            tuple(self.text_tokens[r] for r in rows),
            tuple(self.caption_tokens[r] for r in rows),
            self.location[rows],
            None if self.labels is None else self.labels[rows],
            self.location_columns,
        )

    def location_matrix(self) -> FeatureMatrix:
        idx = [LOCATION_COLUMNS.index(c) for c in self.location_columns]
        return FeatureMatrix(self.location[:, idx], tuple(f"loc:{c}" for c in self.location_columns))


def _fit_vocab_or_empty(docs, cfg: TextConfig) -> Vocabulary:
    try:
        return fit_vocab(docs, cfg.min_df, cfg.max_features).top(cfg.reduce_to)
    except EmptyCorpusError:
        return Vocabulary((), (), len(docs))


def _text_block(docs, vocab: Vocabulary, cfg: TextConfig, missing: Sequence[bool] | None = None):
    n = len(docs)
    out = np.zeros((n, len(vocab) + cfg.embed_dim))
    for r, doc in enumerate(docs):
        if missing is not None and missing[r]:
            continue
        for i, v in tfidf(doc, vocab).items():
            out[r, i] = v
        out[r, len(vocab):] = embed(doc, cfg.embed_dim, cfg.seed)
    return out


@dataclass
class SelfieFeaturizer:
    """Vectorizes a :class:`SelfieDataset` for a block configuration.

    Vocabularies, the document-frequency column cut and imputation medians
    are all fitted on the rows passed to :meth:`fit`. Featurizers sharing a
    ``cache`` dict reuse one all-block fit per distinct training row set, so
    the seven block configurations cost one fit per fold.
    """

    dataset: SelfieDataset
    blocks: frozenset[str] = frozenset(BLOCKS)
    text: TextConfig = field(default_factory=TextConfig)
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.blocks = parse_blocks(self.blocks)
        if not self.blocks:
            raise ValueError("a feature configuration needs at least one block")

    def _full_fit(self, rows: np.ndarray) -> "FittedSelfieFeaturizer":
        key = (id(self.dataset), self.text, rows.tobytes())
        hit = self.cache.get(key)
        if hit is None:
            ds = self.dataset
            text_vocab = _fit_vocab_or_empty([ds.text_tokens[r] for r in rows], self.text)
            cap_vocab = _fit_vocab_or_empty(
                [ds.caption_tokens[r] for r in rows if ds.caption_tokens[r] is not None], self.text)
            imputer = Imputer.fit(ds.location_matrix().values[rows])
            hit = FittedSelfieFeaturizer(ds, self.text, text_vocab, cap_vocab, imputer)
            self.cache[key] = hit
        return hit

    def fit(self, rows, audit: LeakageAudit | None = None) -> "BlockView":
        rows = np.asarray(rows, dtype=np.int64)
        if audit is not None:
            if self.blocks & {"text", "image"}:
                audit.record("vocab_fit", rows)
            if "location" in self.blocks:
                audit.record("impute_fit", rows)
        full = self._full_fit(rows)
        selector = ColumnSelector(self.blocks, self.dataset.location_columns)
        idx = selector.indices(full.columns)
        return BlockView(full, np.asarray(idx, dtype=np.int64), [full.columns[i] for i in idx])


@dataclass
class FittedSelfieFeaturizer:
    dataset: SelfieDataset
    text: TextConfig
    text_vocab: Vocabulary
    caption_vocab: Vocabulary
    imputer: Imputer
    _rows_cache: dict = field(default_factory=dict, repr=False)

    @property
    def columns(self) -> list[str]:
        dim = self.text.embed_dim
        cols = [f"text:tfidf:{t}" for t in self.text_vocab.terms]
        cols += [f"text:emb:{i}" for i in range(dim)]
        cols += [f"image:tfidf:{t}" for t in self.caption_vocab.terms]
        cols += [f"image:emb:{i}" for i in range(dim)]
        cols.append("image:missing")
        loc = list(self.dataset.location_columns)
        cols += [f"loc:{c}" for c in loc]
        cols += [f"loc:{loc[j]}:missing" for j in self.imputer.indicator_cols]
        return cols

    def transform(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        key = rows.tobytes()
        hit = self._rows_cache.get(key)
        if hit is not None:
            return hit
        ds = self.dataset
        idx = rows.tolist()
        missing = [ds.caption_tokens[r] is None for r in idx]
        out = np.hstack([
            _text_block([ds.text_tokens[r] for r in idx], self.text_vocab, self.text),
            _text_block([ds.caption_tokens[r] or () for r in idx], self.caption_vocab, self.text, missing),
            np.asarray(missing, dtype=float)[:, None],
            self.imputer.transform(ds.location_matrix().values[idx]),
        ])
        self._rows_cache[key] = out
        return out


@dataclass
class BlockView:
    """The columns of one block configuration over a shared all-block fit."""

    full: FittedSelfieFeaturizer
    index: np.ndarray
    columns: list[str]

    def transform(self, rows) -> np.ndarray:
        return self.full.transform(rows)[:, self.index]


# ---------------------------------------------------------------------------
# per-risk tasks

class RiskTask(str, enum.Enum):
    WATER = "Water"
    HEIGHT = "Height"
    VEHICLE_ROAD = "VehicleRoad"

    @classmethod
    def parse(cls, name: str) -> "RiskTask":
        key = name.strip().lower().replace("/", "").replace("_", "").replace("-", "")
        aliases = {"water": cls.WATER, "height": cls.HEIGHT, "vehicle": cls.VEHICLE_ROAD,
                   "road": cls.VEHICLE_ROAD, "vehicleroad": cls.VEHICLE_ROAD}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown risk {name!r}") from None


RISK_REASONS = {
    RiskTask.WATER: frozenset({RiskReason.WATER, RiskReason.HEIGHT_AND_WATER}),
    RiskTask.HEIGHT: frozenset({RiskReason.HEIGHT, RiskReason.HEIGHT_AND_WATER}),
    RiskTask.VEHICLE_ROAD: frozenset({RiskReason.VEHICLE, RiskReason.ROAD}),
}
RISK_LOCATION_COLUMNS = {
    RiskTask.WATER: WATER_COLUMNS,
    RiskTask.HEIGHT: ELEVATION_COLUMNS,
    RiskTask.VEHICLE_ROAD: ROAD_RAIL_COLUMNS,
}
MIN_RISK_POSITIVES = 20


class InsufficientPositives(ValueError):
    pass


def risk_labels(annotations: Iterable[AnnotationRecord] | Mapping[str, AnnotationRecord],
                risk: RiskTask | str) -> dict[str, int]:
    """1 if the annotation names a reason belonging to ``risk``; Unsure dropped."""
    risk = risk if isinstance(risk, RiskTask) else RiskTask.parse(risk)
    recs = annotations.values() if isinstance(annotations, Mapping) else annotations
    wanted = RISK_REASONS[risk]
    return {a.tweet_id: int(bool(a.risk_reasons & wanted)) for a in recs if a.label is not Label.UNSURE}


def risk_dataset(annotations, dataset: SelfieDataset, risk: RiskTask | str,
                 min_positives: int = MIN_RISK_POSITIVES) -> tuple[SelfieDataset, np.ndarray]:
    """Rows of ``dataset`` with a usable annotation, labelled for one risk, and
    with the location block cut to the risk's columns."""
    risk = risk if isinstance(risk, RiskTask) else RiskTask.parse(risk)
    labels = risk_labels(annotations, risk)
    rows = [i for i, tid in enumerate(dataset.ids) if tid in labels]
    y = np.asarray([labels[dataset.ids[i]] for i in rows], dtype=np.int64)
    if int(y.sum()) < min_positives:
        raise InsufficientPositives(
            f"{risk.value}: only {int(y.sum())} positive samples (< {min_positives}); "
            "too few to train a classifier")
    sub = replace(dataset.subset(rows), labels=y, location_columns=RISK_LOCATION_COLUMNS[risk])
    return sub, y


def risk_selector(risk: RiskTask) -> ColumnSelector:
    return ColumnSelector(frozenset(BLOCKS), RISK_LOCATION_COLUMNS[risk])


def location_rows_to_array(blocks: Sequence) -> np.ndarray:
    if not blocks:
        return np.zeros((0, len(LOCATION_COLUMNS)))
    return np.asarray([[math.nan if m else v for v, m in zip(b.values, b.missing)] for b in blocks], dtype=float)
