"""Tokenization, TF-IDF over unigrams+bigrams, and hashed document embeddings.

Dense captions are plain text here, so the same machinery produces the
image-based features.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
# mention | hashtag body | alphanumeric run | any other single character
_TOKEN_RE = re.compile(r"(@\w+)|#([^\W_]+)|([^\W_]+)|(\S)")

_EMOJI_RANGES = (
    (0x1F000, 0x1FAFF),
    (0x2600, 0x27BF),
    (0x2300, 0x23FF),
    (0x2B00, 0x2BFF),
    (0x2190, 0x21FF),
)
_EMOJI_JOINERS = {0x200D, 0xFE0E, 0xFE0F, 0x20E3}


def _is_emoji(ch: str) -> bool:
    cp = ord(ch)
    if any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES):
        return True
    return unicodedata.category(ch) == "So"


def tokenize(text: str) -> list[str]:
    """Lowercased tokens with URLs dropped.

    ``#tag`` gives ``tag``, ``@user`` is kept with its ``@``, and each emoji
    code point becomes ``emoji:<hex>``. Everything else splits on
    non-alphanumeric characters.
    """
    if not text:
        return []
    text = URL_RE.sub(" ", text)
    tokens: list[str] = []
    for mention, tag, word, other in _TOKEN_RE.findall(text):
        if mention:
            tokens.append(mention.lower())
        elif tag:
            tokens.append(tag.lower())
        elif word:
            tokens.append(word.lower())
        elif other and ord(other) not in _EMOJI_JOINERS and _is_emoji(other):
            tokens.append(f"emoji:{ord(other):x}")
    return tokens


def ngrams(tokens: Sequence[str]) -> list[str]:
    """Unigrams followed by adjacent bigrams joined with ``_``."""
    return list(tokens) + [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]


# ---------------------------------------------------------------------------
# TF-IDF

@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    df: tuple[int, ...]
    n_docs: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.terms)})
        idf = np.array([math.log((1 + self.n_docs) / (1 + d)) + 1.0 for d in self.df])
        object.__setattr__(self, "_idf", idf)

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self._index

    def index(self, term: str) -> int:
        return self._index[term]

    @property
    def idf(self) -> np.ndarray:
        return self._idf

    def idf_of(self, term: str) -> float:
        return float(self._idf[self._index[term]])

    def top(self, n: int) -> "Vocabulary":
        """Restrict to the ``n`` terms of highest document frequency."""
        if n >= len(self.terms):
            return self
        ranked = sorted(range(len(self.terms)), key=lambda i: (-self.df[i], self.terms[i]))[:n]
        ranked.sort(key=lambda i: self.terms[i])
        return Vocabulary(tuple(self.terms[i] for i in ranked), tuple(self.df[i] for i in ranked), self.n_docs)

    def to_json(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "terms": [
                {"term": t, "index": i, "df": d, "idf": float(w)}
                for i, (t, d, w) in enumerate(zip(self.terms, self.df, self._idf))
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        rows = sorted(d["terms"], key=lambda r: r["index"])
        return cls(tuple(r["term"] for r in rows), tuple(int(r["df"]) for r in rows), int(d["n_docs"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class EmptyCorpusError(ValueError):
    pass


def fit_vocab(docs: Sequence[Sequence[str]], min_df: int = 2, max_features: int = 20_000) -> Vocabulary:
    """Unigram+bigram vocabulary with smoothed idf ``ln((1+N)/(1+df)) + 1``.

    Terms need ``df >= min_df``; the ``max_features`` most frequent survive
    (ties lexicographic). Indices follow lexicographic term order.
    """
    if len(docs) == 0 or all(len(d) == 0 for d in docs):
        raise EmptyCorpusError("cannot fit a vocabulary on empty documents")
    df: Counter = Counter()
    for doc in docs:
        df.update(set(ngrams(doc)))
    kept = [(t, n) for t, n in df.items() if n >= min_df]
    kept.sort(key=lambda tn: (-tn[1], tn[0]))
    kept = sorted(kept[:max_features])
    return Vocabulary(tuple(t for t, _ in kept), tuple(n for _, n in kept), len(docs))


def tfidf(doc: Sequence[str], vocab: Vocabulary) -> dict[int, float]:
    """Sparse L2-normalised ``count * idf``; out-of-vocabulary terms ignored."""
    counts = Counter(t for t in ngrams(doc) if t in vocab)
    if not counts:
        return {}
    raw = {vocab.index(t): c * vocab.idf_of(t) for t, c in counts.items()}
    norm = math.sqrt(sum(v * v for v in raw.values()))
    return {i: v / norm for i, v in sorted(raw.items())}


def tfidf_matrix(docs: Sequence[Sequence[str]], vocab: Vocabulary) -> np.ndarray:
    out = np.zeros((len(docs), len(vocab)))
    for r, doc in enumerate(docs):
        for i, v in tfidf(doc, vocab).items():
            out[r, i] = v
    return out


# ---------------------------------------------------------------------------
# document embedding

class DocumentEmbedder(Protocol):
    dim: int

    def embed(self, doc: Sequence[str] | Sequence[Sequence[str]]) -> np.ndarray: ...


def _hash64(seed: int, salt: bytes, term: str) -> int:
    h = hashlib.blake2b(term.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little") + salt)
    return int.from_bytes(h.digest(), "little")


def _segments(doc) -> list[Sequence[str]]:
    if doc and not isinstance(doc[0], str):
        return list(doc)
    return [doc]


def hashed_index(term: str, dim: int, seed: int = 0) -> tuple[int, int]:
    """Bucket and sign of ``term`` under the signed hashing trick."""
    seed &= (1 << 64) - 1
    idx = _hash64(seed, b"index", term) % dim
    sign = 1 if _hash64(seed, b"sign", term) & 1 else -1
    return idx, sign


def embed(doc: Sequence[str] | Sequence[Sequence[str]], dim: int = 100, seed: int = 0) -> np.ndarray:
    """Signed feature-hashing embedding of unigrams and bigrams, L2-normalised.

    ``doc`` is a token list, or a list of token lists (segments) whose
    bigrams do not cross segment boundaries.
    """
    if dim < 2:
        raise ValueError("embedding dimension must be >= 2")
    signed = np.zeros(dim)
    unsigned = np.zeros(dim)
    for seg in _segments(doc):
        for term in ngrams(seg):
            idx, sign = hashed_index(term, dim, seed)
            signed[idx] += sign
            unsigned[idx] += 1.0
    norm = np.linalg.norm(signed)
    if norm == 0.0:
        # signed buckets cancelled out on a non-empty doc; fall back to counts
        norm = np.linalg.norm(unsigned)
        if norm == 0.0:
            return signed
        return unsigned / norm
    return signed / norm


@dataclass(frozen=True)
class HashingEmbedder:
    dim: int = 100
    seed: int = 0

    def embed(self, doc) -> np.ndarray:
        return embed(doc, self.dim, self.seed)


def caption_document(captions: Iterable[str] | None) -> list[str] | None:
    if not captions:
        return None
    return tokenize(" ".join(captions))


def caption_features(record, vocab: Vocabulary, dim: int = 100, seed: int = 0):
    """``(tfidf, embedding, missing)`` for a tweet's dense captions."""
    tokens = caption_document(record.captions)
    if tokens is None:
        return {}, np.zeros(dim), True
    return tfidf(tokens, vocab), embed(tokens, dim, seed), False
