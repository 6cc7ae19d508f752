"""Config-driven end-to-end run with resumable, digest-checked stages.

Each stage writes flat files under ``<out>/<stage>/`` plus a ``stage.json``
holding the stage key (a digest of the config slice and upstream outputs)
and the digests of what it wrote. A stage whose key and files still match
is skipped on the next run.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from ._util import canonical_json, derive_seed, sha256_bytes, sha256_file, sha256_tree
from .corpus import (
    ConstantSelfieFilter, Corpus, CorpusError, HashSelfieFilter, Label, RuleBasedSelfieFilter, StaticCaptioner,
    attach_captions, corpus_stats, country_table, filter_selfies, incident_breakdown, load_annotations,
    load_incidents, load_tweets, resolve_annotations, save_rejects, save_tweets,
)
from .geofeat import LOCATION_COLUMNS, GeoConfig, LocationFeatureBlock, location_feature_vector, tweet_seed
from .geoproviders import CountingTransport, ProviderCache, Providers, RetryPolicy, Transport
from .learn.features import (
    TABLE4_CONFIGS, InsufficientPositives, RiskTask, SelfieDataset, SelfieFeaturizer, TextConfig, parse_blocks,
    risk_dataset,
)
from .learn.models import FAMILIES, ModelSpec, canonical_family, default_grid
from .learn.selection import cross_validate
from .stats import ecdf_export, ks_two_sample, write_ecdf_csv
from .textfeat import caption_document, tokenize

log = logging.getLogger(__name__)

STAGES = ("ingest", "incidents", "filter", "featurize", "ks", "cv")
REPORT_KINDS = ("table4", "table5", "ecdf", "incidents")
REPORT_NEEDS = {"table4": "cv", "table5": "cv", "ecdf": "ks", "incidents": "incidents"}
TABLE5_RISKS = (RiskTask.WATER, RiskTask.HEIGHT, RiskTask.VEHICLE_ROAD)


class ConfigError(ValueError):
    pass


class MissingStage(RuntimeError):
    pass


class StageFailed(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, manifest: "RunManifest"):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class LearnConfig:
    families: tuple[str, ...] = FAMILIES
    configs: tuple[str, ...] = tuple(name for name, _ in TABLE4_CONFIGS)
    risks: tuple[str, ...] = tuple(r.value for r in TABLE5_RISKS)
    k: int = 10
    inner_k: int = 3
    undersample: bool = True
    grids: dict[str, list[dict]] = field(default_factory=dict)

    def grid(self, family: str, seed: int) -> list[ModelSpec]:
        family = canonical_family(family)
        custom = self.grids.get(family)
        if not custom:
            return default_grid(family, seed)
        return [ModelSpec(family, tuple(p.items()), seed) for p in custom]

    def to_dict(self) -> dict:
        return {"families": list(self.families), "configs": list(self.configs), "risks": list(self.risks),
                "k": self.k, "inner_k": self.inner_k, "undersample": self.undersample,
                "grids": {k: list(v) for k, v in sorted(self.grids.items())}}


@dataclass(frozen=True)
class PipelineConfig:
    tweets: str
    out_dir: str
    annotations: str | None = None
    incidents: str | None = None
    captions: str | None = None
    fixtures: str | None = None
    cache_dir: str | None = None
    tweets_format: str = "jsonl"
    provider_mode: str = "offline"
    endpoints: dict[str, str] = field(default_factory=dict)
    api_key: str | None = None
    rate_limit: float = 10.0
    retries: int = 3
    selfie_filter: str = "constant"
    selfie_threshold: float = 0.5
    geo: GeoConfig = field(default_factory=GeoConfig)
    text: TextConfig = field(default_factory=TextConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    seed: int = 0

    def __post_init__(self):
        if self.provider_mode not in ("offline", "http"):
            raise ConfigError(f"providers.mode must be offline or http, not {self.provider_mode!r}")
        if self.provider_mode == "offline" and not self.fixtures:
            raise ConfigError("offline providers need paths.fixtures")
        if self.selfie_filter not in ("constant", "hash", "rule"):
            raise ConfigError(f"unknown selfie_filter {self.selfie_filter!r}")
        if self.tweets_format not in ("jsonl", "csv"):
            raise ConfigError(f"unknown tweets format {self.tweets_format!r}")
        for name in self.learn.configs:
            if name not in dict(TABLE4_CONFIGS):
                raise ConfigError(f"unknown feature configuration {name!r}")
        try:
            for fam in self.learn.families:
                self.learn.grid(fam, 0)
            for r in self.learn.risks:
                RiskTask.parse(r)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.learn.k < 2 or self.learn.inner_k < 2:
            raise ConfigError("learn.k and learn.inner_k must be at least 2")

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        """Build from the JSON document; relative paths resolve against ``base``."""
        try:
            paths = dict(d.get("paths", {}))
            prov = dict(d.get("providers", {}))
            feats = dict(d.get("features", {}))
            learn = dict(d.get("learn", {}))
            known = {"paths", "providers", "features", "learn", "seed", "selfie_filter"}
            unknown = set(d) - known
            if unknown:
                raise ConfigError(f"unknown config keys {sorted(unknown)}")

            def path(key, required=False):
                v = paths.get(key)
                if v in (None, ""):
                    if required:
                        raise ConfigError(f"paths.{key} is required")
                    return None
                p = Path(v)
                if base is not None and not p.is_absolute():
                    p = base / p
                return str(p)

            sf = dict(d.get("selfie_filter", {}))
            lc = LearnConfig(
                families=tuple(canonical_family(f) for f in learn.get("families", FAMILIES)),
                configs=tuple(learn.get("configs", LearnConfig.configs)),
                risks=tuple(learn.get("risks", LearnConfig.risks)),
                k=int(learn.get("k", 10)),
                inner_k=int(learn.get("inner_k", 3)),
                undersample=bool(learn.get("undersample", True)),
                grids={canonical_family(k): list(v) for k, v in dict(learn.get("grids", {})).items()},
            )
            return cls(
                tweets=path("tweets", required=True),
                out_dir=path("out_dir", required=True),
                annotations=path("annotations"),
                incidents=path("incidents"),
                captions=path("captions"),
                fixtures=path("fixtures"),
                cache_dir=path("cache_dir"),
                tweets_format=paths.get("tweets_format", "jsonl"),
                provider_mode=prov.get("mode", "offline"),
                endpoints=dict(prov.get("endpoints", {})),
                api_key=prov.get("api_key"),
                rate_limit=float(prov.get("rate_limit", 10.0)),
                retries=int(prov.get("retries", 3)),
                selfie_filter=sf.get("kind", "constant"),
                selfie_threshold=float(sf.get("threshold", 0.5)),
                geo=GeoConfig.from_dict(feats.get("geo", {})),
                text=TextConfig.from_dict(feats.get("text", {})),
                learn=lc,
                seed=int(d.get("seed", 0)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if seed is not None:
            doc["seed"] = seed
        return cls.from_dict(doc, base=path.parent)

    def to_dict(self) -> dict:
        return {
            "paths": {"tweets": self.tweets, "out_dir": self.out_dir, "annotations": self.annotations,
                      "incidents": self.incidents, "captions": self.captions, "fixtures": self.fixtures,
                      "cache_dir": self.cache_dir, "tweets_format": self.tweets_format},
            "providers": {"mode": self.provider_mode, "endpoints": dict(self.endpoints), "api_key": self.api_key,
                          "rate_limit": self.rate_limit, "retries": self.retries},
            "selfie_filter": {"kind": self.selfie_filter, "threshold": self.selfie_threshold},
            "features": {"geo": self.geo.to_dict(), "text": self.text.to_dict()},
            "learn": self.learn.to_dict(),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def digest(self) -> str:
        """Hash of everything that can change outputs (paths and keys excluded)."""
        d = self.to_dict()
        d.pop("paths")
        d["providers"].pop("api_key")
        return sha256_bytes(canonical_json(d).encode("utf-8"))


# ---------------------------------------------------------------------------
# manifest

@dataclass
class RunManifest:
    config_hash: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, dict[str, str]] = field(default_factory=dict)
    wall_clock_s: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    completed: list[str] = field(default_factory=list)
    failed: str | None = None
    error: str | None = None
    version: str = __version__
    out_dir: str = ""

    def output_digest(self) -> str:
        """One digest over the config hash, inputs and every stage output."""
        return sha256_bytes(canonical_json({"config": self.config_hash, "inputs": self.inputs,
                                            "outputs": self.outputs, "version": self.version}).encode())

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "inputs": self.inputs, "outputs": self.outputs,
                "output_digest": self.output_digest(), "wall_clock_s": self.wall_clock_s,
                "skipped": self.skipped, "completed": self.completed, "failed": self.failed,
                "error": self.error, "version": self.version}

    @classmethod
    def load(cls, out_dir: str | Path) -> "RunManifest":
        out_dir = Path(out_dir)
        path = out_dir / "manifest.json"
        if not path.exists():
            raise MissingStage(f"no manifest in {out_dir}; run `killfie run --config <config.json>` first")
        d = json.loads(path.read_text(encoding="utf-8"))
        return cls(d["config_hash"], d["inputs"], d["outputs"], d["wall_clock_s"], d.get("skipped", []),
                   d.get("completed", []), d.get("failed"), d.get("error"), d.get("version", __version__),
                   str(out_dir))


def _input_digests(cfg: PipelineConfig) -> dict[str, str]:
    out = {}
    for name in ("tweets", "annotations", "incidents", "captions"):
        p = getattr(cfg, name)
        if p:
            if not Path(p).exists():
                raise CorpusError(f"input {name} not found: {p}")
            out[name] = sha256_file(p)
    if cfg.fixtures:
        if not Path(cfg.fixtures).is_dir():
            raise ConfigError(f"fixture directory not found: {cfg.fixtures}")
        out["fixtures"] = sha256_bytes(canonical_json(sha256_tree(cfg.fixtures)).encode())
    return out


# ---------------------------------------------------------------------------
# file helpers

def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def save_location_csv(ids, blocks: list[LocationFeatureBlock], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *LOCATION_COLUMNS, *(f"{c}_missing" for c in LOCATION_COLUMNS)])
        for tid, b in zip(ids, blocks):
            w.writerow([tid, *(_fmt(v) for v in b.values), *(int(m) for m in b.missing)])


def load_location_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["id"])
            rows.append([math.nan if row[c] in ("", None) or row.get(f"{c}_missing") == "1" else float(row[c])
                         for c in LOCATION_COLUMNS])
    return ids, np.asarray(rows, dtype=float).reshape(len(ids), len(LOCATION_COLUMNS))


def load_feature_dir(path: str | Path) -> SelfieDataset:
    """The dataset written by the featurize stage (no labels)."""
    path = Path(path)
    if not (path / "tokens.jsonl").exists() or not (path / "location.csv").exists():
        raise MissingStage(f"{path} is not a featurize stage directory (tokens.jsonl / location.csv missing)")
    ids, text, caps = [], [], []
    with open(path / "tokens.jsonl", encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            ids.append(d["id"])
            text.append(tuple(d["text_tokens"]))
            caps.append(None if d["caption_tokens"] is None else tuple(d["caption_tokens"]))
    loc_ids, loc = load_location_csv(path / "location.csv")
    if loc_ids != ids:
        raise CorpusError(f"{path}: tokens.jsonl and location.csv disagree on tweet ids")
    return SelfieDataset(tuple(ids), tuple(text), tuple(caps), loc)


def label_map(annotations) -> dict[str, int]:
    """Resolved binary labels: Dangerous 1, NotDangerous 0, Unsure dropped."""
    resolved = resolve_annotations(annotations)
    return {tid: int(a.label is Label.DANGEROUS) for tid, a in resolved.items() if a.label is not Label.UNSURE}


def labelled_subset(ds: SelfieDataset, labels: dict[str, int]) -> tuple[SelfieDataset, np.ndarray]:
    rows = [i for i, tid in enumerate(ds.ids) if tid in labels]
    y = np.asarray([labels[ds.ids[i]] for i in rows], dtype=np.int64)
    sub = ds.subset(rows)
    return SelfieDataset(sub.ids, sub.text_tokens, sub.caption_tokens, sub.location, y), y


# ---------------------------------------------------------------------------
# evaluation building blocks (shared with the CLI)

def cv_cell(ds: SelfieDataset, y: np.ndarray, blocks, family: str, learn: LearnConfig, seed: int,
            text: TextConfig, cache: dict | None = None, audit=None):
    featurizer = SelfieFeaturizer(ds, parse_blocks(blocks), text, cache if cache is not None else {})
    grid = learn.grid(family, derive_seed(seed, "model", canonical_family(family)))
    return cross_validate(grid, None, y, k=learn.k, seed=seed, featurizer=featurizer, inner_k=learn.inner_k,
                          audit=audit, undersample_train=learn.undersample)


def table4(ds: SelfieDataset, y: np.ndarray, learn: LearnConfig, seed: int, text: TextConfig,
           progress: Callable[[str], None] | None = None) -> dict:
    cache: dict = {}
    out: dict = {"configs": list(learn.configs), "families": list(learn.families), "cells": {}}
    configs = dict(TABLE4_CONFIGS)
    for name in learn.configs:
        for fam in learn.families:
            rep = cv_cell(ds, y, configs[name], fam, learn, seed, text, cache)
            out["cells"].setdefault(name, {})[fam] = rep.to_dict()
            if progress:
                progress(f"table4 {name} / {fam}: accuracy {rep.accuracy.mean:.3f}")
    return out


def table5(annotations, ds: SelfieDataset, learn: LearnConfig, seed: int, text: TextConfig,
           progress: Callable[[str], None] | None = None) -> dict:
    out: dict = {"risks": {}}
    resolved = resolve_annotations(annotations)
    for risk_name in learn.risks:
        risk = RiskTask.parse(risk_name)
        try:
            sub, y = risk_dataset(resolved, ds, risk)
        except InsufficientPositives as exc:
            out["risks"][risk.value] = {"status": "insufficient_positives", "message": str(exc)}
            continue
        cache: dict = {}
        per_family = {}
        for fam in learn.families:
            rep = cv_cell(sub, y, {"text", "image", "location"}, fam, learn, derive_seed(seed, risk.value),
                          text, cache)
            per_family[fam] = rep.to_dict()
            if progress:
                progress(f"table5 {risk.value} / {fam}: accuracy {rep.accuracy.mean:.3f}")
        # best technique by mean accuracy; ties go to the earlier family
        best = max(learn.families, key=lambda f: (per_family[f]["summary"]["accuracy"]["mean"],
                                                  -learn.families.index(f)))
        out["risks"][risk.value] = {"status": "ok", "n": int(y.size), "positives": int(y.sum()),
                                    "technique": best, "families": per_family}
    return out


# ---------------------------------------------------------------------------
# stages

@dataclass
class _Ctx:
    cfg: PipelineConfig
    out: Path
    inputs: dict[str, str]
    providers: Providers | None = None
    transport: Transport | None = None
    progress: Callable[[str], None] | None = None

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage


def _selfie_filter(cfg: PipelineConfig):
    return {"constant": ConstantSelfieFilter(1.0), "hash": HashSelfieFilter(), "rule": RuleBasedSelfieFilter()}[
        cfg.selfie_filter]


def _make_providers(ctx: _Ctx) -> Providers:
    cfg = ctx.cfg
    cache = ProviderCache(cfg.cache_dir) if cfg.cache_dir else None
    if cfg.provider_mode == "offline":
        prov = Providers.offline(cfg.fixtures, cache)
    else:
        prov = Providers.http(cfg.endpoints, ctx.transport, cfg.rate_limit, cfg.api_key, cache)
    prov.retry = RetryPolicy(retries=cfg.retries)
    return prov


def _stage_ingest(ctx: _Ctx, d: Path) -> None:
    corpus = load_tweets(ctx.cfg.tweets, ctx.cfg.tweets_format)
    save_tweets(corpus, d / "corpus.jsonl")
    save_rejects(corpus.rejects, d / "rejects.jsonl")
    _write_json(d / "stats.json", corpus_stats(corpus).to_dict())


def _stage_incidents(ctx: _Ctx, d: Path) -> None:
    inc = load_incidents(ctx.cfg.incidents)
    with open(d / "table1.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "casualties"])
        w.writerows(country_table(inc))
    breakdowns = {dim: [[k, v] for k, v in incident_breakdown(inc, dim)]
                  for dim in ("country", "reason", "group_size", "gender", "age_band")}
    reason_incidents: dict[str, int] = {}
    for i in inc:
        reason_incidents[i.reason.value] = reason_incidents.get(i.reason.value, 0) + 1
    _write_json(d / "breakdowns.json", {"total_deaths": inc.total_deaths, "incidents": len(inc),
                                        "group_incidents": inc.group_incidents,
                                        "incidents_by_reason": reason_incidents, "breakdowns": breakdowns})
    for dim, rows in breakdowns.items():
        with open(d / f"by_{dim}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([dim, "incidents" if dim == "group_size" else "count"])
            w.writerows(rows)


def _stage_filter(ctx: _Ctx, d: Path) -> None:
    corpus = load_tweets(ctx.stage_dir("ingest") / "corpus.jsonl")
    kept = filter_selfies(Corpus(corpus.records), _selfie_filter(ctx.cfg), ctx.cfg.selfie_threshold)
    if ctx.cfg.captions:
        mapping = json.loads(Path(ctx.cfg.captions).read_text(encoding="utf-8"))
        kept = attach_captions(kept, StaticCaptioner(mapping))
    save_tweets(kept, d / "selfies.jsonl")
    save_rejects(kept.rejects, d / "rejects.jsonl")


def _stage_featurize(ctx: _Ctx, d: Path) -> None:
    corpus = load_tweets(ctx.stage_dir("filter") / "selfies.jsonl")
    providers = ctx.providers
    blocks, ids = [], []
    with open(d / "tokens.jsonl", "w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(canonical_json({"id": rec.id, "text_tokens": tokenize(rec.text),
                                     "caption_tokens": caption_document(rec.captions)}) + "\n")
    for n, rec in enumerate(corpus):
        ids.append(rec.id)
        # only geo-tagged tweets ever reach a provider
        if rec.geo is None:
            blocks.append(LocationFeatureBlock.all_missing())
        else:
            blocks.append(location_feature_vector(rec.geo, providers, ctx.cfg.geo, tweet_seed(ctx.cfg.seed, rec.id)))
        if ctx.progress and (n + 1) % 200 == 0:
            ctx.progress(f"featurize {n + 1}/{len(corpus)}")
    save_location_csv(ids, blocks, d / "location.csv")


def _labels(ctx: _Ctx) -> dict[str, int]:
    if not ctx.cfg.annotations:
        return {}
    return label_map(load_annotations(ctx.cfg.annotations))


def _stage_ks(ctx: _Ctx, d: Path) -> None:
    ds = load_feature_dir(ctx.stage_dir("featurize"))
    labels = _labels(ctx)
    (d / "ecdf").mkdir()
    report: dict = {"features": {}}
    for j, col in enumerate(LOCATION_COLUMNS):
        groups = {"dangerous": [], "not_dangerous": []}
        for tid, v in zip(ds.ids, ds.location[:, j]):
            if tid in labels and not math.isnan(v):
                groups["dangerous" if labels[tid] else "not_dangerous"].append(float(v))
        entry: dict = {"n_dangerous": len(groups["dangerous"]), "n_not_dangerous": len(groups["not_dangerous"])}
        for cls_name, vals in groups.items():
            rows = ecdf_export(vals) if vals else []
            write_ecdf_csv(rows, d / "ecdf" / f"{col}__{cls_name}.csv")
        if groups["dangerous"] and groups["not_dangerous"]:
            entry.update(ks_two_sample(groups["dangerous"], groups["not_dangerous"]).to_dict())
        else:
            entry["status"] = "insufficient samples"
        report["features"][col] = entry
    _write_json(d / "ks.json", report)


def _stage_cv(ctx: _Ctx, d: Path) -> None:
    if not ctx.cfg.annotations:
        raise ConfigError("the cv stage needs paths.annotations")
    ds = load_feature_dir(ctx.stage_dir("featurize"))
    annotations = load_annotations(ctx.cfg.annotations)
    labelled, y = labelled_subset(ds, label_map(annotations))
    if len(set(y.tolist())) < 2:
        raise CorpusError("annotations hold a single class; cannot cross-validate")
    learn, text, seed = ctx.cfg.learn, ctx.cfg.text, ctx.cfg.seed
    t4 = table4(labelled, y, learn, derive_seed(seed, "table4"), text, ctx.progress)
    t4["n"] = int(y.size)
    t4["positives"] = int(y.sum())
    _write_json(d / "table4.json", t4)
    t5 = table5(annotations, ds, learn, derive_seed(seed, "table5"), text, ctx.progress)
    _write_json(d / "table5.json", t5)


_STAGE_FUNCS = {
    "ingest": _stage_ingest, "incidents": _stage_incidents, "filter": _stage_filter,
    "featurize": _stage_featurize, "ks": _stage_ks, "cv": _stage_cv,
}
_UPSTREAM = {"ingest": (), "incidents": (), "filter": ("ingest",), "featurize": ("filter",),
             "ks": ("featurize",), "cv": ("featurize",)}


def _stage_key(ctx: _Ctx, stage: str, manifest: RunManifest) -> str:
    cfg = ctx.cfg.to_dict()
    relevant: dict = {"stage": stage, "version": __version__, "seed": ctx.cfg.seed}
    if stage == "ingest":
        relevant.update(tweets=ctx.inputs.get("tweets"), fmt=ctx.cfg.tweets_format)
    elif stage == "incidents":
        relevant.update(incidents=ctx.inputs.get("incidents", "bundled"))
    elif stage == "filter":
        relevant.update(filter=cfg["selfie_filter"], captions=ctx.inputs.get("captions"))
    elif stage == "featurize":
        relevant.update(geo=cfg["features"]["geo"], fixtures=ctx.inputs.get("fixtures"),
                        providers={k: v for k, v in cfg["providers"].items() if k != "api_key"})
    elif stage == "ks":
        relevant.update(annotations=ctx.inputs.get("annotations"))
    elif stage == "cv":
        relevant.update(annotations=ctx.inputs.get("annotations"), text=cfg["features"]["text"],
                        learn=cfg["learn"])
    relevant["upstream"] = {u: manifest.outputs.get(u) for u in _UPSTREAM[stage]}
    return sha256_bytes(canonical_json(relevant).encode())


def _stage_outputs(d: Path) -> dict[str, str]:
    return {k: v for k, v in sha256_tree(d).items() if k != "stage.json"}


def _up_to_date(d: Path, key: str) -> dict[str, str] | None:
    meta = d / "stage.json"
    if not meta.exists():
        return None
    try:
        rec = json.loads(meta.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if rec.get("key") != key:
        return None
    outputs = _stage_outputs(d)
    return outputs if outputs == rec.get("outputs") else None


def run_pipeline(cfg: PipelineConfig, until: str | None = None, force: bool = False,
                 transport: Transport | None = None,
                 progress: Callable[[str], None] | None = None) -> RunManifest:
    """Run every stage up to ``until`` (default: all), skipping up-to-date ones."""
    if until is not None and until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}; stages are {', '.join(STAGES)}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = _input_digests(cfg)
    ctx = _Ctx(cfg, out, inputs, transport=transport, progress=progress)
    manifest = RunManifest(cfg.digest(), inputs, out_dir=str(out))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    stages = STAGES if until is None else STAGES[: STAGES.index(until) + 1]
    for stage in stages:
        d = ctx.stage_dir(stage)
        key = _stage_key(ctx, stage, manifest)
        t0 = time.perf_counter()
        current = None if force else _up_to_date(d, key)
        if current is not None:
            manifest.outputs[stage] = current
            manifest.skipped.append(stage)
            manifest.completed.append(stage)
            manifest.wall_clock_s[stage] = round(time.perf_counter() - t0, 6)
            continue
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        try:
            if stage == "featurize" and ctx.providers is None:
                ctx.providers = _make_providers(ctx)
            _STAGE_FUNCS[stage](ctx, d)
        except BaseException as exc:
            manifest.failed = stage
            manifest.error = f"{type(exc).__name__}: {exc}"
            manifest.wall_clock_s[stage] = round(time.perf_counter() - t0, 6)
            _write_json(out / "manifest.json", manifest.to_dict())
            if isinstance(exc, KeyboardInterrupt):
                raise
            raise StageFailed(stage, exc, manifest) from exc
        outputs = _stage_outputs(d)
        _write_json(d / "stage.json", {"key": key, "outputs": outputs})
        manifest.outputs[stage] = outputs
        manifest.completed.append(stage)
        manifest.wall_clock_s[stage] = round(time.perf_counter() - t0, 6)
        if progress:
            progress(f"stage {stage} done in {manifest.wall_clock_s[stage]:.1f}s")
    _write_json(out / "manifest.json", manifest.to_dict())
    return manifest


# ---------------------------------------------------------------------------
# reports

def _require(run_dir: Path, stage: str, kind: str) -> Path:
    d = run_dir / stage
    if not (d / "stage.json").exists():
        until = stage
        raise MissingStage(
            f"report {kind!r} needs the {stage!r} stage, which has not completed in {run_dir}; "
            f"run `killfie run --config <config.json> --until {until}`")
    return d


def _mean_sd(summary: dict, metric: str) -> str:
    s = summary[metric]
    return f"{s['mean']:.3f} ± {s['sd']:.3f}"


def emit_report(run: RunManifest | str | Path, kind: str, dest: str | Path | None = None) -> list[Path]:
    """Write the CSV and JSON artifacts of one report kind; returns the paths."""
    if kind not in REPORT_KINDS:
        raise ValueError(f"unknown report kind {kind!r}; expected one of {REPORT_KINDS}")
    run_dir = Path(run.out_dir if isinstance(run, RunManifest) else run)
    src = _require(run_dir, REPORT_NEEDS[kind], kind)
    dest = Path(dest) if dest is not None else run_dir / "reports"
    dest.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if kind == "incidents":
        for name in ["table1.csv", "breakdowns.json"] + sorted(p.name for p in src.glob("by_*.csv")):
            shutil.copyfile(src / name, dest / f"incidents_{name}")
            written.append(dest / f"incidents_{name}")
        return written

    if kind == "ecdf":
        ks = json.loads((src / "ks.json").read_text(encoding="utf-8"))
        edir = dest / "ecdf"
        edir.mkdir(exist_ok=True)
        for p in sorted((src / "ecdf").glob("*.csv")):
            shutil.copyfile(p, edir / p.name)
            written.append(edir / p.name)
        with open(dest / "ks.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "d", "p", "n_dangerous", "n_not_dangerous"])
            for col, e in ks["features"].items():
                w.writerow([col, e.get("d", ""), e.get("p", ""), e["n_dangerous"], e["n_not_dangerous"]])
        _write_json(dest / "ks.json", ks)
        return written + [dest / "ks.csv", dest / "ks.json"]

    if kind == "table4":
        t4 = json.loads((src / "table4.json").read_text(encoding="utf-8"))
        matrix = {name: {fam: t4["cells"][name][fam]["summary"]["accuracy"] for fam in t4["families"]}
                  for name in t4["configs"]}
        with open(dest / "table4.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Features", *t4["families"]])
            for name in t4["configs"]:
                w.writerow([name, *(f"{matrix[name][f]['mean']:.3f}" for f in t4["families"])])
        _write_json(dest / "table4.json", {"accuracy": matrix, "n": t4.get("n"), "positives": t4.get("positives")})
        return [dest / "table4.csv", dest / "table4.json"]

    # table5
    t5 = json.loads((src / "table5.json").read_text(encoding="utf-8"))
    order = [r.value for r in TABLE5_RISKS]
    risks = sorted(t5["risks"], key=lambda r: order.index(r) if r in order else len(order))
    headers = {"Water": "Water Related Danger", "Height": "Height Related Danger",
               "VehicleRoad": "Vehicle/Road Related Danger"}
    rows = {"Accuracy": "accuracy", "Precision": "precision", "Recall": "recall", "F1-Score": "f1"}
    out_json: dict = {}
    with open(dest / "table5.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *(headers.get(r, r) for r in risks)])
        for label, metric in rows.items():
            cells = []
            for r in risks:
                e = t5["risks"][r]
                if e["status"] != "ok":
                    cells.append("n/a")
                    continue
                cells.append(f"{e['families'][e['technique']]['summary'][metric]['mean']:.3f}")
            w.writerow([label, *cells])
        w.writerow(["Technique", *(t5["risks"][r].get("technique", "n/a") for r in risks)])
    for r in risks:
        e = t5["risks"][r]
        if e["status"] != "ok":
            out_json[r] = {"status": e["status"], "message": e["message"]}
            continue
        s = e["families"][e["technique"]]["summary"]
        out_json[r] = {"technique": e["technique"], "n": e["n"], "positives": e["positives"],
                       "positive_class": {m: s[m] for m in ("accuracy", "precision", "recall", "f1")},
                       "macro": {m: s[f"macro_{m}"] for m in ("precision", "recall", "f1")},
                       "weighted": {m: s[f"weighted_{m}"] for m in ("precision", "recall", "f1")}}
    _write_json(dest / "table5.json", out_json)
    return [dest / "table5.csv", dest / "table5.json"]


__all__ = [
    "PipelineConfig", "LearnConfig", "RunManifest", "ConfigError", "MissingStage", "StageFailed", "STAGES",
    "REPORT_KINDS", "run_pipeline", "emit_report", "load_feature_dir", "label_map", "labelled_subset",
    "table4", "table5", "cv_cell", "CountingTransport",
]
