"""Term-statistics index and the cosine similarity used by every retrieval step.

The index is immutable once built. Similarities are always in [0, 1]: weights
are nonnegative (raw term counts times a smoothed idf), so the cosine of two
vectors cannot go negative, and an empty vector yields similarity 0.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyCorpus

# Fifty common English function words, kept in-repo so that index builds are
# reproducible across environments. Order is alphabetical; the id below names
# this exact revision.
STOPWORD_LIST_ID = "english-50"
STOPWORDS = frozenset(
    """
    about after again all an and any are as at be been being before both
    but by can each for from here if in into is it its no not of on or over
    so such that the their then there these this those through to under was were
    with
    """.split()
)
assert len(STOPWORDS) == 50

# Lowercase alphanumeric runs, with hyphens allowed inside a token so that
# terms like "cross-site" stay whole.
DEFAULT_TOKEN_PATTERN = r"[a-z0-9]+(?:-[a-z0-9]+)*"

_INDEX_FORMAT = "vulrtex-tfidf"
_INDEX_VERSION = 1


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    token_pattern: str = DEFAULT_TOKEN_PATTERN
    stopword_list: str = STOPWORD_LIST_ID

    def stopwords(self) -> frozenset[str]:
        if self.stopword_list == STOPWORD_LIST_ID:
            return STOPWORDS
        if self.stopword_list == "none":
            return frozenset()
        raise ValueError(f"unknown stopword list: {self.stopword_list!r}")


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[str]:
    if config.lowercase:
        text = text.lower()
    stop = config.stopwords()
    return [t for t in re.findall(config.token_pattern, text) if t not in stop]


@dataclass(frozen=True)
class TermVector:
    """Sparse tf-idf vector; term ids map into the owning index's vocabulary."""

    weights: dict[int, float] = field(default_factory=dict)

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.weights.values()))

    def dot(self, other: "TermVector") -> float:
        # Summation runs in sorted term-id order so dot(a, b) == dot(b, a)
        # bit-for-bit, which keeps similarity exactly symmetric.
        common = sorted(self.weights.keys() & other.weights.keys())
        return sum(self.weights[t] * other.weights[t] for t in common)


class TfIdfIndex:
    """Frozen document-frequency statistics over a corpus.

    idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1, the smoothed variant, so
    every known term keeps a strictly positive weight.
    """

    def __init__(self, vocabulary: dict[str, int], doc_freq: dict[str, int],
                 n_docs: int, config: TokenizerConfig):
        self.vocabulary = vocabulary
        self.doc_freq = doc_freq
        self.n_docs = n_docs
        self.config = config
        self._idf = {
            term: math.log((1 + n_docs) / (1 + doc_freq[term])) + 1.0
            for term in vocabulary
        }

    def idf(self, term: str) -> float:
        return self._idf[term]

    def vectorize(self, text: str) -> TermVector:
        counts = Counter(tokenize(text, self.config))
        weights = {
            self.vocabulary[term]: count * self._idf[term]
            for term, count in counts.items()
            if term in self.vocabulary
        }
        return TermVector(weights)

    def similarity(self, a: str, b: str) -> float:
        """Cosine of the two tf-idf vectors; 0 when either side is empty."""
        va = self.vectorize(a)
        vb = self.vectorize(b)
        return cosine(va, vb)

    def to_dict(self) -> dict:
        terms = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return {
            "format": _INDEX_FORMAT,
            "version": _INDEX_VERSION,
            "config": {
                "lowercase": self.config.lowercase,
                "token_pattern": self.config.token_pattern,
                "stopword_list": self.config.stopword_list,
            },
            "n_docs": self.n_docs,
            "terms": [[t, self.doc_freq[t]] for t in terms],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "TfIdfIndex":
        if data.get("format") != _INDEX_FORMAT:
            raise ValueError("not a tf-idf index file")
        if data.get("version") != _INDEX_VERSION:
            raise ValueError(f"unsupported index version {data.get('version')}")
        cfg = TokenizerConfig(**data["config"])
        vocabulary = {t: i for i, (t, _) in enumerate(data["terms"])}
        doc_freq = {t: df for t, df in data["terms"]}
        return cls(vocabulary, doc_freq, data["n_docs"], cfg)

    @classmethod
    def load(cls, path: str | Path) -> "TfIdfIndex":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def cosine(a: TermVector, b: TermVector) -> float:
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, a.dot(b) / (na * nb))


def build_index(docs: list[str], config: TokenizerConfig = TokenizerConfig()) -> TfIdfIndex:
    """Count document frequencies and freeze them into an index.

    Vocabulary ids are dense 0..|V|-1 in sorted term order, which makes the
    index a pure function of (docs-as-a-multiset-of-token-sets, config).
    """
    if not docs:
        raise EmptyCorpus("build_index needs at least one document")
    doc_freq: Counter[str] = Counter()
    for doc in docs:
        doc_freq.update(set(tokenize(doc, config)))
    vocabulary = {term: i for i, term in enumerate(sorted(doc_freq))}
    return TfIdfIndex(vocabulary, dict(doc_freq), len(docs), config)


def vectorize(index: TfIdfIndex, text: str) -> TermVector:
    return index.vectorize(text)


def similarity(index: TfIdfIndex, a: str, b: str) -> float:
    return index.similarity(a, b)
