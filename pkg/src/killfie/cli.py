"""``killfie`` command line.

Exit codes: 0 ok, 2 configuration/usage error, 3 provider error, 4 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._util import derive_seed
from .corpus import (
    BREAKDOWN_DIMENSIONS, CorpusError, Label, country_table, incident_breakdown, load_annotations, load_incidents,
    load_tweets, save_rejects, save_tweets, corpus_stats,
)
from .geofeat import LOCATION_COLUMNS, GeoConfig, LocationFeatureBlock, location_feature_vector, tweet_seed
from .geoproviders import DecodeError, FeatureMissing, ProviderCache, ProviderError, Providers, RetryPolicy
from .learn.features import (
    TABLE4_CONFIGS, ColumnSelector, InsufficientPositives, RiskTask, SelfieDataset, SelfieFeaturizer, TextConfig,
    feature_config, risk_dataset, risk_selector,
)
from .learn.models import FAMILIES, InvalidHyperparameter, ModelSpec, canonical_family, default_grid, train
from .learn.selection import ArrayFeaturizer, cross_validate, grid_search
from .pipeline import (
    REPORT_KINDS, STAGES, ConfigError, LearnConfig, MissingStage, PipelineConfig, StageFailed, emit_report,
    label_map, load_feature_dir, run_pipeline, save_location_csv,
)
from .stats import ecdf_export, fleiss_kappa, ks_two_sample, ratings_matrix, write_ecdf_csv
from .textfeat import EmptyCorpusError, Vocabulary, caption_document, embed, fit_vocab, tfidf, tokenize

log = logging.getLogger("killfie")

EXIT_OK, EXIT_CONFIG, EXIT_PROVIDER, EXIT_DATA = 0, 2, 3, 4


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# feature sources: a featurize-stage directory or a numeric CSV

def _read_table(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """``(ids, columns, values)`` from a CSV with an ``id``/``tweet_id`` column.

    ``<col>_missing`` flag columns mark cells of ``<col>`` as missing (NaN)
    and are dropped; blank cells are NaN too.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = list(reader.fieldnames or [])
        id_col = "id" if "id" in fields else "tweet_id" if "tweet_id" in fields else None
        if id_col is None:
            raise CorpusError(f"{path}: needs an id or tweet_id column")
        flags = {f for f in fields if f.endswith("_missing") and f[: -len("_missing")] in fields}
        cols = [f for f in fields if f != id_col and f not in flags]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            vals = []
            for c in cols:
                raw = row[c]
                if raw in ("", None) or row.get(f"{c}_missing") == "1":
                    vals.append(math.nan)
                    continue
                try:
                    vals.append(float(raw))
                except ValueError:
                    raise CorpusError(f"{path} line {lineno}: column {c} is not numeric ({raw!r})") from None
            ids.append(row[id_col])
            rows.append(vals)
    return ids, cols, np.asarray(rows, dtype=float).reshape(len(ids), len(cols))


def _qualified(col: str) -> str:
    return f"loc:{col}" if col in LOCATION_COLUMNS else col


def read_labels(path: str | Path) -> dict[str, int]:
    """Binary labels from an annotations CSV (resolved by majority) or an
    ``id,label`` CSV with 0/1 or label names."""
    with open(path, newline="", encoding="utf-8") as fh:
        fields = csv.DictReader(fh).fieldnames or []
    if {"risk_reasons", "annotator_id"} <= set(fields):
        return label_map(load_annotations(path))
    out: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            tid = row.get("id") or row.get("tweet_id")
            raw = (row.get("label") or "").strip()
            if not tid:
                raise CorpusError(f"{path} line {lineno}: missing id")
            if raw in ("1", Label.DANGEROUS.value):
                out[tid] = 1
            elif raw in ("0", Label.NOT_DANGEROUS.value):
                out[tid] = 0
            elif raw != Label.UNSURE.value:
                raise CorpusError(f"{path} line {lineno}: unknown label {raw!r}")
    return out


@dataclass
class Source:
    ids: list[str]
    dataset: SelfieDataset | None = None
    X: np.ndarray | None = None
    columns: list[str] | None = None

    @classmethod
    def open(cls, path: str | Path) -> "Source":
        path = Path(path)
        if path.is_dir():
            ds = load_feature_dir(path)
            return cls(list(ds.ids), dataset=ds)
        ids, cols, X = _read_table(path)
        return cls(ids, X=X, columns=[_qualified(c) for c in cols])

    def labelled(self, labels: dict[str, int]) -> tuple["Source", np.ndarray]:
        rows = [i for i, tid in enumerate(self.ids) if tid in labels]
        if not rows:
            raise CorpusError("no feature rows have a usable label")
        y = np.asarray([labels[self.ids[i]] for i in rows], dtype=np.int64)
        if self.dataset is not None:
            return Source([self.ids[i] for i in rows], dataset=self.dataset.subset(rows)), y
        return Source([self.ids[i] for i in rows], X=self.X[rows], columns=self.columns), y

    def featurizer(self, selector: ColumnSelector, text: TextConfig, cache: dict | None = None):
        if self.dataset is not None:
            ds = replace(self.dataset, location_columns=tuple(selector.location_columns))
            return SelfieFeaturizer(ds, selector.blocks, text, cache if cache is not None else {})
        idx = selector.indices(self.columns)
        if not idx:
            raise CorpusError(f"no feature columns belong to blocks {sorted(selector.blocks)}")
        return ArrayFeaturizer(self.X[:, idx], [self.columns[i] for i in idx])


def _text_config(args) -> TextConfig:
    return TextConfig(min_df=args.min_df, reduce_to=args.reduce_to, embed_dim=args.embed_dim)


def _grid(family: str, seed: int, params: str | None) -> list[ModelSpec]:
    fam = canonical_family(family)
    if params:
        try:
            p = json.loads(params)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--params is not JSON: {exc}") from exc
        return [ModelSpec(fam, tuple(d.items()), seed) for d in (p if isinstance(p, list) else [p])]
    return default_grid(fam, seed)


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args) -> int:
    corpus = load_tweets(args.tweets, args.format)
    save_tweets(corpus, args.out)
    rejects = args.rejects or str(args.out) + ".rejects.jsonl"
    save_rejects(corpus.rejects, rejects)
    _emit({"records": len(corpus), "rejects": len(corpus.rejects), "stats": corpus_stats(corpus).to_dict()})
    return EXIT_OK


def cmd_incidents(args) -> int:
    inc = load_incidents(args.incidents)
    if args.by == "table1":
        rows = country_table(inc)
        header = ["country", "casualties"]
    else:
        rows = incident_breakdown(inc, args.by)
        header = [args.by, "incidents" if args.by == "group_size" else "count"]
    if args.json:
        _emit({"total_deaths": inc.total_deaths, "incidents": len(inc), "group_incidents": inc.group_incidents,
               "by": args.by, "rows": [list(r) for r in rows]})
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return EXIT_OK


def _providers(args) -> Providers:
    cache = ProviderCache(args.cache_dir) if args.cache_dir else None
    if args.providers == "offline":
        if not args.fixtures:
            raise ConfigError("--providers offline needs --fixtures <dir>")
        prov = Providers.offline(args.fixtures, cache)
    else:
        endpoints = json.loads(args.endpoints) if args.endpoints else {}
        if not endpoints:
            raise ConfigError("--providers http needs --endpoints '{\"elevation\": url, ...}'")
        prov = Providers.http(endpoints, rate_limit=args.rate_limit, api_key=args.api_key, cache=cache)
    prov.retry = RetryPolicy(retries=args.retries)
    return prov


def cmd_geofeat(args) -> int:
    corpus = load_tweets(args.corpus)
    cfg = GeoConfig()
    if args.config:
        try:
            cfg = GeoConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"bad --config: {exc}") from exc
    prov = _providers(args)
    ids, blocks = [], []
    for rec in corpus:
        ids.append(rec.id)
        if rec.geo is None:
            blocks.append(LocationFeatureBlock.all_missing())
        else:
            blocks.append(location_feature_vector(rec.geo, prov, cfg, tweet_seed(args.seed, rec.id)))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_location_csv(ids, blocks, Path(args.out))
    missing = int(sum(all(b.missing) for b in blocks))
    _emit({"rows": len(ids), "all_missing_rows": missing, "out": str(args.out)})
    return EXIT_OK


def cmd_textfeat(args) -> int:
    corpus = load_tweets(args.corpus)
    if args.field == "text":
        docs = [tokenize(r.text) for r in corpus]
    else:
        docs = [caption_document(r.captions) for r in corpus]
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        fit_docs = [d for d in docs if d is not None]
        vocab = fit_vocab(fit_docs, args.min_df, args.max_features)
        vocab.save(args.vocab_out or str(args.out) + ".vocab.json")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec, doc in zip(corpus, docs):
            vec = tfidf(doc or [], vocab)
            fh.write(rec.id + "\t" + " ".join(f"{i}:{v:.10g}" for i, v in sorted(vec.items())) + "\n")
    if args.embeddings:
        with open(args.embeddings, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "missing", *(f"e{i}" for i in range(args.embed_dim))])
            for rec, doc in zip(corpus, docs):
                e = embed(doc or [], args.embed_dim, args.seed)
                w.writerow([rec.id, int(doc is None), *(f"{v:.10g}" for v in e)])
    _emit({"documents": len(docs), "vocabulary": len(vocab), "out": str(args.out)})
    return EXIT_OK


def cmd_ks(args) -> int:
    ids, cols, X = _read_table(args.features)
    if args.column not in cols:
        raise ConfigError(f"column {args.column!r} not in {args.features}; available: {', '.join(cols)}")
    labels = read_labels(args.labels)
    j = cols.index(args.column)
    a = [X[i, j] for i, t in enumerate(ids) if labels.get(t) == 1 and not math.isnan(X[i, j])]
    b = [X[i, j] for i, t in enumerate(ids) if labels.get(t) == 0 and not math.isnan(X[i, j])]
    if not a or not b:
        raise CorpusError(f"need samples in both classes for {args.column}; got {len(a)} and {len(b)}")
    res = ks_two_sample(a, b)
    if args.ecdf_dir:
        d = Path(args.ecdf_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_ecdf_csv(ecdf_export(a), d / f"{args.column}__dangerous.csv")
        write_ecdf_csv(ecdf_export(b), d / f"{args.column}__not_dangerous.csv")
    _emit(res.to_dict())
    return EXIT_OK


def cmd_kappa(args) -> int:
    anns = load_annotations(args.annotations)
    common = None
    if args.common_set:
        common = {line.strip() for line in Path(args.common_set).read_text(encoding="utf-8").splitlines()
                  if line.strip()}
    per_item: dict[str, list[str]] = {}
    for a in anns:
        if common is None or a.tweet_id in common:
            per_item.setdefault(a.tweet_id, []).append(a.label.value)
    if not per_item:
        raise CorpusError("no annotations on the common set")
    cats = [l.value for l in Label]
    m = ratings_matrix(dict(sorted(per_item.items())), cats)
    kappa = fleiss_kappa(m)
    _emit({"kappa": kappa, "defined": kappa is not None, "items": int(m.shape[0]), "raters": int(m[0].sum())})
    return EXIT_OK


def cmd_train(args) -> int:
    src, y = Source.open(args.features).labelled(read_labels(args.labels))
    text = _text_config(args)
    selector = feature_config(args.blocks)
    rows = np.arange(y.size)
    fitted = src.featurizer(selector, text).fit(rows)
    X = fitted.transform(rows)
    grid = _grid(args.family, args.seed, args.params)
    spec = grid_search(grid, X, y, args.inner_k, derive_seed(args.seed, "inner")) if len(grid) > 1 else grid[0]
    model = train(spec, X, y)
    doc = {"model": model.to_dict(), "columns": list(fitted.columns), "blocks": sorted(selector.blocks),
           "train_accuracy": float(np.mean(model.predict(X) == y))}
    full = getattr(fitted, "full", None)
    if full is not None:
        doc["text_vocab"] = full.text_vocab.to_json()
        doc["caption_vocab"] = full.caption_vocab.to_json()
        doc["imputer"] = {"medians": full.imputer.medians.tolist(),
                          "indicator_cols": full.imputer.indicator_cols.tolist()}
    _write_json(args.out, doc)
    _emit({"spec": spec.to_dict(), "train_accuracy": doc["train_accuracy"], "out": str(args.out)})
    return EXIT_OK


def cmd_cv(args) -> int:
    src, y = Source.open(args.features).labelled(read_labels(args.labels))
    fz = src.featurizer(feature_config(args.blocks), _text_config(args))
    rep = cross_validate(_grid(args.family, args.seed, args.params), None, y, k=args.k, seed=args.seed,
                         featurizer=fz, inner_k=args.inner_k, undersample_train=not args.no_undersample)
    out = rep.to_dict()
    if args.out:
        _write_json(args.out, out)
    _emit(out["summary"])
    return EXIT_OK


def cmd_table4(args) -> int:
    src, y = Source.open(args.features).labelled(read_labels(args.labels))
    text = _text_config(args)
    families = [canonical_family(f) for f in args.families.split(",")]
    cache: dict = {}
    cells: dict = {}
    for name, blocks in TABLE4_CONFIGS:
        for fam in families:
            fz = src.featurizer(ColumnSelector(blocks), text, cache)
            rep = cross_validate(default_grid(fam, derive_seed(args.seed, "model", fam)), None, y, k=args.k,
                                 seed=args.seed, featurizer=fz, inner_k=args.inner_k)
            cells.setdefault(name, {})[fam] = rep.to_dict()["summary"]
            log.info("%s / %s: %.3f", name, fam, rep.accuracy.mean)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "table4.json", {"families": families, "cells": cells})
    with open(out / "table4.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Features", *families])
        for name, _ in TABLE4_CONFIGS:
            w.writerow([name, *(f"{cells[name][f]['accuracy']['mean']:.3f}" for f in families)])
    print((out / "table4.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_risk_cv(args) -> int:
    risk = RiskTask.parse(args.risk)
    src = Source.open(args.features)
    anns = load_annotations(args.annotations)
    text = _text_config(args)
    families = [canonical_family(f) for f in args.families.split(",")]
    if src.dataset is not None:
        from .corpus import resolve_annotations

        ds, y = risk_dataset(resolve_annotations(anns), src.dataset, risk)
        src = Source(list(ds.ids), dataset=ds)
    else:
        from .corpus import resolve_annotations
        from .learn.features import MIN_RISK_POSITIVES, risk_labels

        labels = risk_labels(resolve_annotations(anns), risk)
        src, y = src.labelled(labels)
        if int(y.sum()) < MIN_RISK_POSITIVES:
            raise InsufficientPositives(f"{risk.value}: only {int(y.sum())} positive samples")
    selector = risk_selector(risk)
    per_family, cache = {}, {}
    for fam in families:
        rep = cross_validate(default_grid(fam, derive_seed(args.seed, "model", fam)), None, y, k=args.k,
                             seed=args.seed, featurizer=src.featurizer(selector, text, cache), inner_k=args.inner_k)
        per_family[fam] = rep.to_dict()["summary"]
    best = max(families, key=lambda f: (per_family[f]["accuracy"]["mean"], -families.index(f)))
    s = per_family[best]
    table = {m: s[m]["mean"] for m in ("accuracy", "precision", "recall", "f1")}
    out = {"risk": risk.value, "n": int(y.size), "positives": int(y.sum()), "technique": best,
           "positive_class": table,
           "macro": {m: s[f"macro_{m}"]["mean"] for m in ("precision", "recall", "f1")},
           "weighted": {m: s[f"weighted_{m}"]["mean"] for m in ("precision", "recall", "f1")},
           "families": per_family}
    if args.out:
        _write_json(args.out, out)
    _emit({k: out[k] for k in ("risk", "n", "positives", "technique", "positive_class", "macro", "weighted")})
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = PipelineConfig.load(args.config, seed=args.seed)
    progress = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    m = run_pipeline(cfg, until=args.until, force=args.force, progress=progress)
    if args.until is None:
        for kind in REPORT_KINDS:
            emit_report(m, kind)
    _emit({"out_dir": m.out_dir, "output_digest": m.output_digest(), "completed": m.completed,
           "skipped": m.skipped, "wall_clock_s": m.wall_clock_s})
    return EXIT_OK


def cmd_report(args) -> int:
    paths = emit_report(args.run, args.kind, args.dest)
    _emit({"kind": args.kind, "files": [str(p) for p in paths]})
    return EXIT_OK


def cmd_synth(args) -> int:
    from .corpus import save_annotations
    from .synth import PlantedConfig, table6_annotations, write_planted_bundle

    cfg = PlantedConfig(n_tweets=args.n_tweets, seed=args.seed)
    config = write_planted_bundle(args.out, cfg)
    if args.table6:
        save_annotations(table6_annotations(args.seed), args.table6)
    _emit({"out": str(args.out), "config": str(Path(args.out) / "config.json"), "paths": config["paths"]})
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_text_opts(p) -> None:
    p.add_argument("--min-df", type=int, default=2)
    p.add_argument("--reduce-to", type=int, default=500, help="keep this many text columns by document frequency")
    p.add_argument("--embed-dim", type=int, default=100)


def _add_provider_opts(p) -> None:
    p.add_argument("--providers", choices=["offline", "http"], default="offline")
    p.add_argument("--fixtures", help="offline fixture directory (elevation.npz, tiles/, places.csv)")
    p.add_argument("--endpoints", help="JSON object of elevation/tiles/places URLs for --providers http")
    p.add_argument("--api-key")
    p.add_argument("--cache-dir")
    p.add_argument("--rate-limit", type=float, default=10.0, help="requests per second per provider")
    p.add_argument("--retries", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="killfie", description="Dangerous-selfie pipeline tools")
    ap.add_argument("--version", action="version", version=f"killfie {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a tweet file into a canonical corpus")
    p.add_argument("--tweets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--rejects")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("incidents", help="incident database summaries")
    isub = p.add_subparsers(dest="action", required=True)
    q = isub.add_parser("stats")
    q.add_argument("--by", choices=[*BREAKDOWN_DIMENSIONS, "table1"], required=True)
    q.add_argument("--incidents", help="incident CSV (default: bundled fixture)")
    q.add_argument("--json", action="store_true")
    q.set_defaults(func=cmd_incidents)

    p = sub.add_parser("geofeat", help="location features for geo-tagged tweets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with geo feature settings")
    _add_provider_opts(p)
    p.set_defaults(func=cmd_geofeat)

    p = sub.add_parser("textfeat", help="TF-IDF (sparse) and hashed embeddings of text or captions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--field", choices=["text", "captions"], default="text")
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fit-vocab", action="store_true", help="fit the vocabulary on this corpus (default)")
    g.add_argument("--vocab", help="use a saved vocabulary")
    p.add_argument("--vocab-out")
    p.add_argument("--embeddings", help="also write dense embeddings CSV here")
    p.add_argument("--min-df", type=int, default=2)
    p.add_argument("--max-features", type=int, default=20_000)
    p.add_argument("--embed-dim", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_textfeat)

    p = sub.add_parser("ks", help="two-sample KS test of one feature between classes")
    p.add_argument("--features", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--ecdf-dir")
    p.set_defaults(func=cmd_ks)

    p = sub.add_parser("kappa", help="Fleiss' kappa over a common annotation set")
    p.add_argument("--annotations", required=True)
    p.add_argument("--common-set", help="file of tweet ids, one per line")
    p.set_defaults(func=cmd_kappa)

    def learn_opts(p, family=True):
        p.add_argument("--features", required=True, help="featurize stage directory or numeric CSV")
        p.add_argument("--labels", required=True)
        if family:
            p.add_argument("--blocks", default="text,image,location")
            p.add_argument("--family", default="rf", help=f"one of {', '.join(FAMILIES)} or dt/rf/knn/svm")
            p.add_argument("--params", help="JSON hyperparameters, or a JSON list of them to grid-search")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--inner-k", type=int, default=3)
        _add_text_opts(p)

    p = sub.add_parser("train", help="fit one classifier on all labelled rows")
    learn_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="nested stratified cross-validation of one family")
    learn_opts(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--no-undersample", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("table4", help="7 feature configurations x classifier families")
    learn_opts(p, family=False)
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_table4)

    p = sub.add_parser("risk-cv", help="per-risk classifier (water, height, vehicle)")
    p.add_argument("--features", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--risk", required=True, choices=["water", "height", "vehicle"])
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inner-k", type=int, default=3)
    p.add_argument("--out")
    _add_text_opts(p)
    p.set_defaults(func=cmd_risk_cv)

    p = sub.add_parser("run", help="run the whole pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config's global seed")
    p.add_argument("--until", choices=STAGES)
    p.add_argument("--force", action="store_true", help="rerun stages even when up to date")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="emit a report from a completed run")
    p.add_argument("--run", required=True, help="the run's output directory")
    p.add_argument("--kind", required=True, choices=REPORT_KINDS)
    p.add_argument("--dest")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write the planted synthetic corpus, world fixtures and a config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-tweets", type=int, default=1000)
    p.add_argument("--table6", help="also write the 3,155-row annotation fixture here")
    p.set_defaults(func=cmd_synth)
    return ap


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageFailed):
        return _exit_code(exc.cause)
    if isinstance(exc, (ConfigError, InvalidHyperparameter)):
        return EXIT_CONFIG
    if isinstance(exc, (ProviderError, FeatureMissing)):
        return EXIT_PROVIDER
    if isinstance(exc, (CorpusError, MissingStage, InsufficientPositives, DecodeError, EmptyCorpusError,
                        OSError, ValueError, KeyError)):
        return EXIT_DATA
    raise exc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        print(f"killfie {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
