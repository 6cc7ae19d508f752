"""Acceptance suite: one test group per criterion, summarized at the end of the run.

Every independent oracle lives in this file; none of them calls the
function under test.
"""
from __future__ import annotations

import json
import math
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from killfie._util import derive_seed
from killfie.corpus import GeoPoint, IncidentReason, country_table, incident_breakdown, load_incidents
from killfie.geofeat import GeoConfig, elevation_features, elevation_sample_seeds, location_feature_vector, water_features
from killfie.geoproviders import FunctionElevation, Providers
from killfie.learn import (
    LeakageAudit, ModelSpec, SelfieDataset, SelfieFeaturizer, TextConfig, cross_validate, default_grid, train,
)
from killfie.pipeline import PipelineConfig, run_pipeline
from killfie.stats import fleiss_kappa, ks_two_sample
from killfie.synth import (
    PlantedConfig, World, cliff_points, lake_points, offline_world_providers, plain_points, planted_corpus,
    write_planted_bundle,
)
from killfie.textfeat import embed, fit_vocab, tfidf, tokenize

WORLD = World()


def crit(n: int, title: str):
    return pytest.mark.criterion(n, title)


# ---------------------------------------------------------------------------
# 1. incidents

TABLE1 = [
    ("India", 76), ("Pakistan", 9), ("USA", 8), ("Russia", 6), ("Philippines, China", 4), ("Spain", 3),
    ("Indonesia, Portugal, Peru, Turkey", 2),
    ("Romania, Australia, Mexico, South Africa, Italy, Serbia, Chile, Nepal, Hong Kong", 1),
]


@crit(1, "incident characterization exact")
def test_c1_incident_tables():
    t0 = time.perf_counter()
    inc = load_incidents()
    assert country_table(inc) == TABLE1
    assert inc.total_deaths == 127
    assert inc.group_incidents == 24
    assert dict(incident_breakdown(inc, "group_size")) == {2: 16, 3: 5, 5: 1, 7: 2}
    reasons = dict(incident_breakdown(inc, "reason"))
    assert reasons["Height"] == 29
    assert reasons["Train"] == 11
    assert reasons["HeightAndWater"] == 27
    assert sum(1 for i in inc if i.reason is IncidentReason.HEIGHT_AND_WATER) == 14
    assert time.perf_counter() - t0 < 1.0


@crit(1, "incident characterization exact")
def test_c1_cli_matches(capsys):
    from killfie.cli import main

    assert main(["incidents", "stats", "--by", "table1", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert [tuple(r) for r in out["rows"]] == TABLE1
    assert out["total_deaths"] == 127


# ---------------------------------------------------------------------------
# 2. KS against brute force and permutation oracles

def _gap_oracle(a, b) -> int:
    """max over pooled points of |F_a - F_b| scaled by n*m."""
    n, m = len(a), len(b)
    best = 0
    for x in list(a) + list(b):
        ca = sum(1 for v in a if v <= x)
        cb = sum(1 for v in b if v <= x)
        best = max(best, abs(ca * m - cb * n))
    return best


def _perm_p_oracle(a, b, shuffles: int, rng) -> float:
    n, m = len(a), len(b)
    z = np.concatenate([a, b])
    order = np.argsort(z, kind="stable")
    zs = z[order]
    ends = np.flatnonzero(np.append(zs[1:] != zs[:-1], True))  # last index of each tie block
    gap_obs = _gap_oracle(a, b)
    is_a = np.zeros((shuffles, n + m), dtype=np.int8)
    is_a[:, :n] = 1
    is_a = rng.permuted(is_a, axis=1)
    ca = np.cumsum(is_a, axis=1)[:, ends].astype(np.int64)
    cb = (ends + 1)[None, :] - ca
    gaps = np.abs(ca * m - cb * n).max(axis=1)
    return float(np.mean(gaps >= gap_obs))


@crit(2, "KS d exact and p within 0.02 of permutation oracle")
def test_c2_ks_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240502)
    checked_p = 0
    for trial in range(200):
        n, m = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        if trial % 3 == 0:  # heavy ties
            a, b = rng.integers(0, 5, n).astype(float), rng.integers(0, 5, m).astype(float)
        else:
            a, b = rng.normal(0, 1, n), rng.normal(float(rng.uniform(0, 1.5)), 1, m)
        res = ks_two_sample(a, b)
        gap = _gap_oracle(a, b)
        assert Fraction(res.d) == Fraction(gap, n * m) or res.d == gap / (n * m)
        p_oracle = _perm_p_oracle(a, b, 100_000, rng)
        if 0.01 <= p_oracle <= 0.99:
            checked_p += 1
            assert abs(res.p - p_oracle) <= 0.02, (trial, n, m, res.p, p_oracle)
    assert checked_p >= 100
    assert time.perf_counter() - t0 < 60


# ---------------------------------------------------------------------------
# 3. water geometry

def _water_oracle(mask):
    h, w = mask.shape
    cx, cy = w // 2, h // 2
    best = None
    count = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                count += 1
                d = math.sqrt((x - cx) ** 2 + (y - cy) ** 2)
                best = d if best is None else min(best, d)
    if best is None:
        best = math.ceil(math.sqrt(w * w + h * h))
    return best, count / (w * h)


@crit(3, "water geometry exact")
def test_c3_water_masks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    for i in range(20):
        density = [0.0005, 0.002, 0.01, 0.1, 0.5][i % 5]
        mask = rng.random((100, 100)) < density
        got = water_features(mask)
        assert (got.min_water_dist_px, got.water_fraction) == _water_oracle(mask)
    none = water_features(np.zeros((500, 500), bool))
    assert (none.min_water_dist_px, none.water_fraction) == (708.0, 0.0)
    full = water_features(np.ones((100, 100), bool))
    assert (full.min_water_dist_px, full.water_fraction) == (0.0, 1.0)
    assert time.perf_counter() - t0 < 10


# ---------------------------------------------------------------------------
# 4. elevation features

def _bilinear(values, lat0, lon0, step, lat, lon):
    fi, fj = (lat - lat0) / step, (lon - lon0) / step
    i, j = math.floor(fi), math.floor(fj)
    ti, tj = fi - i, fj - j
    top = values[i, j] + (values[i, j + 1] - values[i, j]) * tj
    bottom = values[i + 1, j] + (values[i + 1, j + 1] - values[i + 1, j]) * tj
    return top + (bottom - top) * ti


def _disk(lat, lon, radius, n, seed):
    rng = np.random.default_rng(seed)
    theta = rng.random(n) * 2 * math.pi
    r = radius * np.sqrt(rng.random(n))
    kx = 111_320.0 * math.cos(math.radians(lat))
    return [(round(lat + r[k] * math.cos(theta[k]) / 111_320.0, 6), round(lon + r[k] * math.sin(theta[k]) / kx, 6))
            for k in range(n)]


def _elevation_oracle(point, seed, cfg, height):
    near_seed, far_seed = derive_seed(seed, "near"), derive_seed(seed, "far")
    here = height(round(point.lat, 6), round(point.lon, 6))
    near = [height(a, b) for a, b in _disk(point.lat, point.lon, cfg.r_near_m, cfg.n_near, near_seed)]
    far = [height(a, b) for a, b in _disk(point.lat, point.lon, cfg.r_far_m, cfg.n_far, far_seed)]
    return here, max(far), max(here - v for v in near), max(near) - min(near)


@crit(4, "elevation features match replay oracle; translation covariance")
def test_c4_elevation_oracle_and_translation():
    t0 = time.perf_counter()
    grid = WORLD.elevation_grid()
    values = grid.values.copy()

    def height(lat, lon):
        return _bilinear(values, WORLD.lat0, WORLD.lon0, WORLD.step_deg, lat, lon)

    cfg = GeoConfig()
    providers = Providers(grid, None, None)
    pts = cliff_points(WORLD, 30, seed=11)
    for k, p in enumerate(pts):
        seed = derive_seed(99, k)
        assert elevation_sample_seeds(seed) == (derive_seed(seed, "near"), derive_seed(seed, "far"))
        feats, missing = elevation_features(p, providers, cfg, seed)
        assert not any(missing)
        want = _elevation_oracle(p, seed, cfg, height)
        got = (feats.elev_here, feats.max_elev_nearby, feats.max_drop_from_here, feats.max_pairwise_range)
        assert np.allclose(got, want, rtol=0, atol=1e-9), (k, got, want)
        # a point on the plateau edge sees the whole drop within the near disk
    assert max(elevation_features(p, providers, cfg, 5)[0].max_pairwise_range for p in pts) > 400

    for k in (-50.0, 0.0, 1000.0):
        shifted = Providers(FunctionElevation(lambda lat, lon, k=k: grid.elevation(lat, lon) + k), None, None)
        for i, p in enumerate(pts[:10]):
            base, _ = elevation_features(p, providers, cfg, i)
            moved, _ = elevation_features(p, shifted, cfg, i)
            assert moved.elev_here == pytest.approx(base.elev_here + k, abs=1e-9)
            assert moved.max_elev_nearby == pytest.approx(base.max_elev_nearby + k, abs=1e-9)
            assert moved.max_drop_from_here == pytest.approx(base.max_drop_from_here, abs=1e-9)
            assert moved.max_pairwise_range == pytest.approx(base.max_pairwise_range, abs=1e-9)
    assert time.perf_counter() - t0 < 5


# ---------------------------------------------------------------------------
# 5. KS separation on synthetic populations

@crit(5, "KS separation cliff/plain and lake/inland")
def test_c5_population_separation():
    t0 = time.perf_counter()
    prov = offline_world_providers(WORLD)

    def feats(points, tag):
        return np.array([location_feature_vector(p, prov, GeoConfig(), derive_seed(tag, i)).values
                         for i, p in enumerate(points)])

    cliff = feats(cliff_points(WORLD, 100, 1), "cliff")
    plain = feats(plain_points(WORLD, 100, 2), "plain")
    lake = feats(lake_points(WORLD, 100, 3), "lake")
    assert ks_two_sample(cliff[:, 3], plain[:, 3]).p < 0.01
    assert ks_two_sample(lake[:, 4], plain[:, 4]).p < 0.01
    assert ks_two_sample(lake[:, 5], plain[:, 5]).p < 0.01
    assert time.perf_counter() - t0 < 30


# ---------------------------------------------------------------------------
# 6. text stack

@crit(6, "text stack fixtures and embedding invariants")
def test_c6_tokenizer_fixtures():
    assert tokenize("") == []
    assert tokenize("#Selfie at http://x.co cliff!") == ["selfie", "at", "cliff"]
    assert tokenize("\U0001F600") == ["emoji:1f600"]
    assert tokenize("see www.example.com/a?b=1 NOW") == ["see", "now"]
    assert tokenize("@Bob on #TopOfTheWorld \U0001F60E\U0001F30A") == [
        "@bob", "on", "topoftheworld", "emoji:1f60e", "emoji:1f30a"]


@crit(6, "text stack fixtures and embedding invariants")
def test_c6_tfidf_hand_computed():
    vocab = fit_vocab([["a", "b"], ["a"]], min_df=1)
    assert vocab.terms == ("a", "a_b", "b")
    assert vocab.idf_of("a") == 1.0
    c = math.log(3 / 2) + 1
    norm = math.sqrt(2 * 2 + c * c + c * c)
    got = tfidf(["a", "a", "b"], vocab)
    assert got == {0: 2 / norm, 1: c / norm, 2: c / norm}
    assert got[0] == pytest.approx(0.7092972666062737, abs=1e-15)
    assert got[2] == pytest.approx(0.49844627974580596, abs=1e-15)
    assert fit_vocab([["a", "b"], ["a"]], min_df=2).terms == ("a",)
    assert tfidf([], vocab) == {}
    assert tfidf(["b"], vocab) == {2: 1.0}


@crit(6, "text stack fixtures and embedding invariants")
def test_c6_embedding_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    words = [f"w{i}" for i in range(300)]
    for _ in range(1000):
        doc = [words[int(i)] for i in rng.integers(0, len(words), int(rng.integers(0, 15)))]
        seed = int(rng.integers(0, 2**63))
        e1, e2 = embed(doc, 100, seed), embed(list(doc), 100, seed)
        assert np.array_equal(e1, e2)
        norm = float(np.linalg.norm(e1))
        if doc:
            assert norm == pytest.approx(1.0, abs=1e-12)
            doubled = embed([doc, doc], 100, seed)
            assert float(e1 @ doubled) == pytest.approx(1.0, abs=1e-12)
        else:
            assert norm == 0.0
    assert time.perf_counter() - t0 < 10


# ---------------------------------------------------------------------------
# 7. learners

def _acc(model, X, y):
    return float(np.mean(model.predict(X) == y))


@crit(7, "learner sanity")
def test_c7_separable_fixtures():
    rng = np.random.default_rng(70)
    x = rng.uniform(-1, 1, 200)
    X1, y1 = x[:, None], (x > 0.13).astype(int)
    assert _acc(train(ModelSpec.make("DecisionTree", max_depth=1), X1, y1), X1, y1) == 1.0

    X = np.vstack([rng.normal(-3, 0.5, (100, 3)), rng.normal(3, 0.5, (100, 3))])
    y = np.repeat([0, 1], 100)
    for spec in (ModelSpec.make("DecisionTree"), ModelSpec.make("KNN", k=3)):
        assert _acc(train(spec, X, y), X, y) == 1.0
        assert cross_validate(spec, X, y, k=5, seed=1).accuracy.mean == 1.0


def _noisy_xor(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 6))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    flip = rng.random(n) < 0.15
    return X, np.where(flip, 1 - y, y)


@crit(7, "learner sanity")
def test_c7_forest_beats_tree_on_noisy_xor():
    X, y = _noisy_xor(400, 71)
    dt = cross_validate(ModelSpec.make("DecisionTree", seed=3), X, y, k=10, seed=5, undersample_train=False)
    rf = cross_validate(ModelSpec.make("RandomForest", seed=3, n_trees=100), X, y, k=10, seed=5,
                        undersample_train=False)
    assert rf.accuracy.mean >= dt.accuracy.mean


@crit(7, "learner sanity")
def test_c7_svm_margin_two():
    rng = np.random.default_rng(72)
    n = 200
    y = np.repeat([0, 1], n // 2)
    x0 = np.where(y == 1, rng.uniform(1, 4, n), rng.uniform(-4, -1, n))  # gap of width 2 around 0
    X = np.column_stack([x0, rng.normal(0, 1, n)])
    model = train(ModelSpec.make("LinearSVM", seed=0), X, y)
    assert _acc(model, X, y) == 1.0
    hist = model.objective_history
    assert all(b <= a for a, b in zip(hist, hist[1:]))


@crit(7, "learner sanity")
def test_c7_shuffled_labels_near_chance():
    rng = np.random.default_rng(73)
    X = rng.normal(size=(600, 5))
    y = rng.permutation(np.repeat([0, 1], 300))
    for spec in (ModelSpec.make("DecisionTree", max_depth=3), ModelSpec.make("KNN", k=7)):
        acc = cross_validate(spec, X, y, k=10, seed=4).accuracy.mean
        assert 0.4 <= acc <= 0.6, (spec.family, acc)


# ---------------------------------------------------------------------------
# 8. planted end-to-end run

@crit(8, "planted-signal run: Table 4 bounds")
def test_c8_planted_table4(planted_run):
    cfg, manifest, seconds = planted_run
    table = json.loads((Path(cfg.out_dir) / "cv" / "table4.json").read_text())
    rf = {name: cells["RandomForest"]["summary"]["accuracy"]["mean"] for name, cells in table["cells"].items()}
    print("RandomForest 10-fold accuracy:", json.dumps(rf, sort_keys=True))
    assert table["n"] >= 900
    assert rf["Text + Image + Location"] >= 0.90
    assert rf["Location Only"] >= 0.75
    assert rf["Image Only"] >= 0.80
    assert seconds < 300


# ---------------------------------------------------------------------------
# 9. leakage

def _small_planted_dataset(n=300):
    planted = planted_corpus(WORLD, PlantedConfig(n_tweets=n, n_height=20, n_water=20, n_road=10, n_unsure=0))
    rng = np.random.default_rng(9)
    loc = rng.normal(size=(n, 8))
    loc[rng.random((n, 8)) < 0.2] = np.nan
    y = np.array([int(a.label.value == "Dangerous") for a in planted.annotations])
    ds = SelfieDataset(
        tuple(t.id for t in planted.tweets),
        tuple(tuple(tokenize(t.text)) for t in planted.tweets),
        tuple(tuple(tokenize(" ".join(t.captions))) if i % 7 else None for i, t in enumerate(planted.tweets)),
        loc, y)
    return ds, y


@crit(9, "leakage audit: no test-fold rows touched")
def test_c9_leakage_audit_clean():
    t0 = time.perf_counter()
    ds, y = _small_planted_dataset()
    text = TextConfig(embed_dim=16, reduce_to=100)
    for family in ("KNN", "LinearSVM"):
        audit = LeakageAudit()
        fz = SelfieFeaturizer(ds, text=text, cache={})
        cross_validate(default_grid(family, 1)[:2], None, y, k=5, seed=2, featurizer=fz, audit=audit)
        assert {"undersample", "grid_search", "vocab_fit", "impute_fit", "standardize", "train"} <= audit.stages()
        assert audit.violations() == []
        assert len(audit.test_rows) == 5
    assert time.perf_counter() - t0 < 60


@crit(9, "leakage audit: no test-fold rows touched")
def test_c9_audit_detects_a_leaky_featurizer():
    ds, y = _small_planted_dataset(120)

    class Leaky:
        def __init__(self, inner):
            self.inner = inner

        def fit(self, rows, audit=None):
            return self.inner.fit(np.arange(len(y)), audit)

    audit = LeakageAudit()
    fz = Leaky(SelfieFeaturizer(ds, text=TextConfig(embed_dim=8), cache={}))
    cross_validate(ModelSpec.make("DecisionTree", max_depth=3), None, y, k=3, seed=0, featurizer=fz, audit=audit)
    assert any("vocab_fit" in v for v in audit.violations())


# ---------------------------------------------------------------------------
# 10. Fleiss' kappa

def _kappa_oracle(matrix):
    """Pairwise-agreement form, enumerating rater pairs explicitly."""
    m = np.asarray(matrix)
    n_items, n_cat = m.shape
    r = int(m[0].sum())
    agree = []
    totals = Counter()
    for row in m:
        raters = [c for c in range(n_cat) for _ in range(int(row[c]))]
        pairs = sum(1 for i in range(r) for j in range(r) if i != j and raters[i] == raters[j])
        agree.append(Fraction(pairs, r * (r - 1)))
        totals.update(raters)
    p_bar = sum(agree) / n_items
    p_e = sum(Fraction(totals[c], n_items * r) ** 2 for c in range(n_cat))
    if p_e == 1:
        return None
    return float((p_bar - p_e) / (1 - p_e))


@crit(10, "Fleiss' kappa")
def test_c10_kappa():
    t0 = time.perf_counter()
    assert fleiss_kappa([[3, 0], [0, 3], [3, 0]]) == 1.0
    assert fleiss_kappa([[4, 0, 0], [4, 0, 0]]) is None
    rng = np.random.default_rng(10)
    for _ in range(10):
        items, cats, r = int(rng.integers(2, 9)), int(rng.integers(2, 5)), int(rng.integers(2, 7))
        m = np.array([rng.multinomial(r, rng.dirichlet(np.ones(cats))) for _ in range(items)])
        want = _kappa_oracle(m)
        got = fleiss_kappa(m)
        assert (got is None) == (want is None)
        if want is not None:
            assert abs(got - want) <= 1e-12
    assert time.perf_counter() - t0 < 1


# ---------------------------------------------------------------------------
# 11. determinism

@crit(11, "determinism: identical output digests")
def test_c11_two_runs_identical(planted_run, tmp_path):
    cfg1, m1, s1 = planted_run
    write_planted_bundle(tmp_path, PlantedConfig())
    cfg2 = PipelineConfig.load(tmp_path / "config.json")
    t0 = time.perf_counter()
    m2 = run_pipeline(cfg2)
    s2 = time.perf_counter() - t0
    assert cfg1.digest() == cfg2.digest()
    assert m1.output_digest() == m2.output_digest()
    assert s1 + s2 < 600
