from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from killfie.cli import main
from killfie.geoproviders import CountingTransport, ProviderError
from killfie.pipeline import (
    ConfigError, MissingStage, PipelineConfig, RunManifest, StageFailed, emit_report, run_pipeline,
)
from killfie.synth import PlantedConfig, write_planted_bundle

SMALL_LEARN = {
    "families": ["DecisionTree", "KNN"],
    "configs": ["Location Only", "Image Only", "Text + Image + Location"],
    "risks": ["Water", "Height", "VehicleRoad"],
    "k": 3,
    "inner_k": 2,
    "grids": {"DecisionTree": [{"max_depth": 4}], "KNN": [{"k": 5}]},
}


def _small_bundle(root: Path, **learn) -> Path:
    write_planted_bundle(root, PlantedConfig(n_tweets=160, n_height=24, n_water=12, n_road=10, n_unsure=4, seed=3))
    cfg = json.loads((root / "config.json").read_text())
    cfg["learn"] = {**SMALL_LEARN, **learn}
    cfg["features"] = {"text": {"embed_dim": 16, "reduce_to": 100}}
    (root / "config.json").write_text(json.dumps(cfg))
    return root / "config.json"


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    path = _small_bundle(root)
    counting = CountingTransport()
    manifest = run_pipeline(PipelineConfig.load(path), transport=counting)
    return path, manifest, counting


def test_offline_run_is_network_free(small_run):
    _, manifest, counting = small_run
    assert counting.calls == 0
    assert manifest.completed == ["ingest", "incidents", "filter", "featurize", "ks", "cv"]


def test_stage_outputs(small_run):
    path, manifest, _ = small_run
    out = Path(manifest.out_dir)
    stats = json.loads((out / "ingest" / "stats.json").read_text())
    assert stats["total_tweets"] == 160
    t4 = json.loads((out / "cv" / "table4.json").read_text())
    assert set(t4["cells"]) == set(SMALL_LEARN["configs"])
    t5 = json.loads((out / "cv" / "table5.json").read_text())
    # 12 water positives is below the minimum the risk classifiers need
    assert t5["risks"]["Water"]["status"] == "insufficient_positives"
    assert t5["risks"]["Height"]["status"] == "ok"
    ks = json.loads((out / "ks" / "ks.json").read_text())
    assert "max_pairwise_range" in ks["features"]
    assert RunManifest.load(out).output_digest() == manifest.output_digest()


def test_resume_skips_completed_stages(small_run):
    path, manifest, _ = small_run
    again = run_pipeline(PipelineConfig.load(path))
    assert again.skipped == manifest.completed
    assert again.output_digest() == manifest.output_digest()


def test_reports(small_run, tmp_path):
    _, manifest, _ = small_run
    t4 = emit_report(manifest, "table4", tmp_path)
    rows = list(csv.reader(open(tmp_path / "table4.csv")))
    assert rows[0] == ["Features", "DecisionTree", "KNN"]
    assert len(rows) == 4
    emit_report(manifest.out_dir, "table5", tmp_path)
    t5 = list(csv.reader(open(tmp_path / "table5.csv")))
    assert t5[0] == ["", "Water Related Danger", "Height Related Danger", "Vehicle/Road Related Danger"]
    assert [r[0] for r in t5[1:]] == ["Accuracy", "Precision", "Recall", "F1-Score", "Technique"]
    assert emit_report(manifest, "ecdf", tmp_path)
    assert t4


def test_report_needs_stage(tmp_path):
    with pytest.raises(MissingStage):
        emit_report(tmp_path, "table4")


def test_until_and_missing_stage(tmp_path):
    cfg = PipelineConfig.load(_small_bundle(tmp_path))
    m = run_pipeline(cfg, until="filter")
    assert m.completed == ["ingest", "incidents", "filter"]
    with pytest.raises(MissingStage):
        emit_report(m, "ecdf")
    emit_report(m, "incidents")
    assert (Path(m.out_dir) / "reports" / "incidents_table1.csv").exists()


def test_config_validation(tmp_path):
    path = _small_bundle(tmp_path)
    base = json.loads(path.read_text())
    for mutate in (
        lambda d: d.update(bogus=1),
        lambda d: d["learn"].update(k=1),
        lambda d: d["learn"].update(families=["Perceptron"]),
        lambda d: d["providers"].update(mode="carrier-pigeon"),
        lambda d: d["paths"].pop("tweets"),
        lambda d: d["learn"].update(grids={"KNN": [{"k": -3}]}),
    ):
        doc = json.loads(json.dumps(base))
        mutate(doc)
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(doc)


def test_digest_ignores_paths(tmp_path):
    path = _small_bundle(tmp_path)
    doc = json.loads(path.read_text())
    a = PipelineConfig.from_dict(doc)
    doc["paths"]["out_dir"] = str(tmp_path / "elsewhere")
    b = PipelineConfig.from_dict(doc)
    doc["seed"] = 1
    c = PipelineConfig.from_dict(doc)
    assert a.digest() == b.digest() != c.digest()


def test_failed_stage_is_recorded(tmp_path):
    path = _small_bundle(tmp_path)
    (tmp_path / "tweets.jsonl").write_text("{broken\n{broken\n")
    with pytest.raises(StageFailed) as info:
        run_pipeline(PipelineConfig.load(path))
    assert info.value.stage == "ingest"
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["failed"] == "ingest"


# ---------------------------------------------------------------------------
# command line

def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2
    assert main(["ingest", "--tweets", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "o")]) == 4
    assert main(["report", "--run", str(tmp_path), "--kind", "table5"]) == 4
    assert main(["train", "--features", str(tmp_path), "--labels", str(tmp_path / "x.csv"), "--out",
                 str(tmp_path / "m.json"), "--params", "{not json"]) in (2, 4)
    err = capsys.readouterr().err
    assert "killfie run --config" in err


def test_cli_provider_error_code(monkeypatch):
    import killfie.cli as cli

    def boom(args):
        raise ProviderError("elevation service down")

    monkeypatch.setattr(cli, "cmd_kappa", boom)
    assert main(["kappa", "--annotations", "x.csv"]) == 3


def test_cli_on_small_run(small_run, tmp_path, capsys):
    path, manifest, _ = small_run
    root = path.parent
    feats = str(Path(manifest.out_dir) / "featurize")
    labels = str(root / "annotations.csv")

    assert main(["ks", "--features", feats + "/location.csv", "--column", "max_pairwise_range",
                 "--labels", labels, "--ecdf-dir", str(tmp_path / "ecdf")]) == 0
    ks = json.loads(capsys.readouterr().out)
    assert ks["n"] + ks["m"] > 100 and 0 <= ks["p"] <= 1
    assert (tmp_path / "ecdf" / "max_pairwise_range__dangerous.csv").exists()

    assert main(["train", "--features", feats, "--labels", labels, "--blocks", "location", "--family", "dt",
                 "--params", '{"max_depth": 3}', "--out", str(tmp_path / "m.json")]) == 0
    model = json.loads((tmp_path / "m.json").read_text())
    assert model["model"]["spec"]["params"]["max_depth"] == 3
    assert all(c.startswith("loc:") for c in model["columns"])
    capsys.readouterr()

    assert main(["cv", "--features", feats, "--labels", labels, "--blocks", "image", "--family", "knn",
                 "--params", '{"k": 3}', "--k", "3", "--out", str(tmp_path / "cv.json")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["accuracy"]["mean"] > 0.8

    assert main(["risk-cv", "--features", feats, "--annotations", labels, "--risk", "height",
                 "--families", "dt", "--k", "3"]) == 0
    risk = json.loads(capsys.readouterr().out)
    assert risk["technique"] == "DecisionTree" and risk["positives"] == 24

    assert main(["risk-cv", "--features", feats, "--annotations", labels, "--risk", "water",
                 "--families", "dt", "--k", "3"]) == 4


def test_cli_textfeat_and_geofeat(small_run, tmp_path, capsys):
    path, manifest, _ = small_run
    root = path.parent
    corpus = str(Path(manifest.out_dir) / "filter" / "selfies.jsonl")
    assert main(["textfeat", "--corpus", corpus, "--field", "captions", "--out", str(tmp_path / "cap.tsv"),
                 "--embeddings", str(tmp_path / "cap.csv"), "--embed-dim", "8"]) == 0
    lines = (tmp_path / "cap.tsv").read_text().splitlines()
    assert len(lines) == 160 and "\t" in lines[0]
    assert (tmp_path / "cap.tsv.vocab.json").exists()
    assert main(["textfeat", "--corpus", corpus, "--out", str(tmp_path / "again.tsv"),
                 "--vocab", str(tmp_path / "cap.tsv.vocab.json"), "--field", "captions"]) == 0
    assert (tmp_path / "again.tsv").read_text() == (tmp_path / "cap.tsv").read_text()

    assert main(["geofeat", "--corpus", corpus, "--out", str(tmp_path / "loc.csv"), "--fixtures",
                 str(root / "world"), "--seed", "0"]) == 0
    # same seed and fixtures as the pipeline: identical location features
    assert (tmp_path / "loc.csv").read_text() == (Path(manifest.out_dir) / "featurize" / "location.csv").read_text()
    capsys.readouterr()


def test_cli_kappa_and_synth(tmp_path, capsys):
    ann = tmp_path / "ann.csv"
    rows = ["tweet_id,label,risk_reasons,annotator_id"]
    for i in range(4):
        for r in ("r1", "r2", "r3"):
            rows.append(f"t{i},{'Dangerous' if i % 2 else 'NotDangerous'},,{r}")
    ann.write_text("\n".join(rows) + "\n")
    assert main(["kappa", "--annotations", str(ann)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out == {"kappa": 1.0, "defined": True, "items": 4, "raters": 3}

    assert main(["synth", "--out", str(tmp_path / "b"), "--n-tweets", "200", "--table6",
                 str(tmp_path / "t6.csv")]) == 0
    assert (tmp_path / "b" / "config.json").exists()
    with open(tmp_path / "t6.csv") as fh:
        labels = [r["label"] for r in csv.DictReader(fh)]
    assert (labels.count("Dangerous"), labels.count("NotDangerous"), labels.count("Unsure")) == (396, 2676, 83)
