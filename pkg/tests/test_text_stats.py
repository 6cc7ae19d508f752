from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from killfie.stats import Ecdf, ecdf_export, fleiss_kappa, ks_two_sample, ratings_matrix, write_ecdf_csv
from killfie.textfeat import (
    EmptyCorpusError, Vocabulary, caption_document, embed, fit_vocab, hashed_index, ngrams, tfidf, tfidf_matrix,
    tokenize,
)

words = st.sampled_from(["cliff", "lake", "selfie", "road", "sky", "me", "edge", "water"])
docs_st = st.lists(st.lists(words, min_size=0, max_size=6), min_size=1, max_size=8)


def test_ngrams():
    assert ngrams(["a", "b", "c"]) == ["a", "b", "c", "a_b", "b_c"]
    assert ngrams([]) == []


def test_tokenize_never_emits_whitespace_or_urls():
    toks = tokenize("Look https://pic.twitter.com/abc  at\tthis WWW.site.org/x   view\n#Wow")
    assert toks == ["look", "at", "this", "view", "wow"]
    assert all(not any(c.isspace() for c in t) for t in toks)


def test_tokenize_keeps_mentions_verbatim():
    # the handle keeps its @ and is lowercased like every other token
    assert tokenize("hi @Some_User!") == ["hi", "@some_user"]


@given(docs_st)
def test_vocab_order_independent(docs):
    if all(len(d) == 0 for d in docs):
        with pytest.raises(EmptyCorpusError):
            fit_vocab(docs, min_df=1)
        return
    v1 = fit_vocab(docs, min_df=1)
    v2 = fit_vocab(list(reversed(docs)), min_df=1)
    assert v1 == v2
    assert np.all(v1.idf > 0)


@given(docs_st, st.lists(words, max_size=10))
def test_tfidf_norm_is_zero_or_one(docs, doc):
    if all(len(d) == 0 for d in docs):
        return
    vec = tfidf(doc, fit_vocab(docs, min_df=1))
    norm = math.sqrt(sum(v * v for v in vec.values()))
    assert norm == 0.0 or norm == pytest.approx(1.0, abs=1e-12)


def test_vocab_max_features_and_top():
    docs = [["a", "b"], ["a", "c"], ["a", "b"], ["d"]]
    v = fit_vocab(docs, min_df=1, max_features=2)
    assert v.terms == ("a", "a_b")  # a_b and b tie on df; lexicographic order decides
    assert fit_vocab(docs, min_df=1).top(1).terms == ("a",)


def test_repeated_doc_keeps_idf():
    one = fit_vocab([["x", "y"], ["x"]], min_df=1)
    two = fit_vocab([["x", "y"], ["x"], ["x", "y"], ["x"]], min_df=1)
    assert one.terms == two.terms
    assert np.allclose(one.idf, two.idf, atol=0.2)
    assert two.df == tuple(2 * d for d in one.df)


def test_vocab_json_roundtrip(tmp_path):
    v = fit_vocab([["a", "b"], ["a"]], min_df=1)
    v.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json") == v
    assert tfidf_matrix([["a"], []], v).tolist() == [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]


def test_caption_document_joins_sentences():
    assert caption_document(["a man on a cliff", "blue water below"]) == tokenize(
        "a man on a cliff blue water below")
    assert caption_document(None) is None
    assert caption_document([]) is None


def test_embedding_fixture_is_collision_free():
    terms = ngrams(["man", "cliff", "edge"])
    slots = {hashed_index(t, 1000, seed=0)[0] for t in terms}
    assert len(slots) == len(terms)
    e = embed(["man", "cliff", "edge"], 1000, 0)
    assert np.count_nonzero(e) == len(terms)
    assert np.allclose(np.abs(e[e != 0]), 1 / math.sqrt(len(terms)))


def test_embed_seed_and_dim():
    a = embed(["x", "y"], 50, 1)
    assert not np.array_equal(a, embed(["x", "y"], 50, 2))
    assert embed([], 8).tolist() == [0.0] * 8
    with pytest.raises(ValueError):
        embed(["x"], 1)


# ---------------------------------------------------------------------------
# ECDF and KS

def test_ecdf_examples(tmp_path):
    assert ecdf_export([1, 2, 3], [0, 1.5, 3]) == [(0, 0.0), (1.5, 1 / 3), (3, 1.0)]
    assert ecdf_export([5]) == [(5.0, 1.0)]
    assert [f for _, f in ecdf_export([2, 3], [-5, 0])] == [0.0, 0.0]
    write_ecdf_csv(ecdf_export([1, 2]), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "x,F"
    assert Ecdf.of([3, 1, 1]).values.tolist() == [1.0, 1.0, 3.0]


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=20), st.lists(finite, min_size=1, max_size=20))
@settings(max_examples=60)
def test_ks_monotone_invariance(a, b):
    base = ks_two_sample(a, b)
    # doubling is strictly increasing and exact in floating point, so no ties merge or split
    moved = ks_two_sample([2.0 * x for x in a], [2.0 * x for x in b])
    assert moved.d == base.d
    assert 0.0 <= base.d <= 1.0
    assert 0.0 <= base.p <= 1.0


def test_ks_identical_and_disjoint():
    same = ks_two_sample([1, 2, 3], [1, 2, 3])
    assert (same.d, same.p) == (0.0, 1.0)
    apart = ks_two_sample(range(10), range(100, 110))
    assert apart.d == 1.0
    assert apart.p == pytest.approx(2 / math.comb(20, 10))


def test_ks_asymptotic_for_large_samples():
    rng = np.random.default_rng(0)
    a, b = rng.normal(0, 1, 400), rng.normal(0.3, 1, 400)
    res = ks_two_sample(a, b)
    assert res.method == "asymptotic"
    exact_small = ks_two_sample(a[:90], b[:90])
    assert exact_small.method == "exact"
    assert res.p < 0.01
    with pytest.raises(ValueError):
        ks_two_sample([], [1])
    with pytest.raises(ValueError):
        ks_two_sample([1], [2], method="magic")


def test_ks_exact_and_asymptotic_agree_roughly():
    rng = np.random.default_rng(1)
    a, b = rng.normal(0, 1, 80), rng.normal(0.25, 1, 80)
    ex = ks_two_sample(a, b, "exact").p
    asy = ks_two_sample(a, b, "asymptotic").p
    assert abs(ex - asy) < 0.05


# ---------------------------------------------------------------------------
# kappa

def test_kappa_hand_fixture():
    # 4 items, 2 categories, 3 raters
    m = [[3, 0], [2, 1], [0, 3], [1, 2]]
    # P_i = 1, 1/3, 1, 1/3 -> Pbar = 2/3; p = (1/2, 1/2) -> Pe = 1/2
    assert fleiss_kappa(m) == pytest.approx(1 / 3, abs=1e-15)


def test_kappa_errors():
    with pytest.raises(ValueError):
        fleiss_kappa([[2, 0], [1, 0]])
    with pytest.raises(ValueError):
        fleiss_kappa([[1, 0], [0, 1]])
    with pytest.raises(ValueError):
        fleiss_kappa([[-1, 3]])


def test_ratings_matrix():
    m = ratings_matrix({"x": ["a", "a", "b"], "y": ["b", "b", "b"]}, ["a", "b"])
    assert m.tolist() == [[2, 1], [0, 3]]
