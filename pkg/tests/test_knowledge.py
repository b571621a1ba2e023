from pathlib import Path

import pytest

from vulrtex.errors import DuplicateKey
from vulrtex.knowledge import (
    KnowledgeRecord,
    KnowledgeStore,
    ingest,
    load_store,
    retrieve_golden,
    save_store,
)
from vulrtex.textindex import STOPWORDS

from oracles import oracle_similarity

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def store() -> KnowledgeStore:
    return load_store(DATA / "va_store.jsonl")


def oracle_golden_keys(store, path_text, theta):
    corpus = [r.text for r in store.records] + [path_text]
    scored = [(oracle_similarity(path_text, r.text, corpus, STOPWORDS), r.key)
              for r in store.records]
    kept = [(s, k) for s, k in scored if s > theta]
    kept.sort(key=lambda p: (-p[0], p[1]))
    return [k for _, k in kept]


def test_fixture_has_fifty_records(store):
    assert len(store) == 50


def test_duplicate_key_rejected():
    rec = KnowledgeRecord("kb-fix", "ADV-1", "some advisory text")
    with pytest.raises(DuplicateKey):
        ingest([rec, KnowledgeRecord("kb-fix", "ADV-1", "other text")])


def test_same_key_different_source_allowed():
    a = KnowledgeRecord("kb-fix", "ADV-1", "text one")
    b = KnowledgeRecord("debian-fix", "ADV-1", "text two")
    assert len(ingest([a, b])) == 2


def test_empty_record_text_rejected():
    with pytest.raises(ValueError):
        KnowledgeRecord("kb-fix", "ADV-2", "")


def test_empty_store_returns_nothing():
    assert retrieve_golden(ingest([]), "any text at all", 0.0) == []


def test_threshold_one_returns_nothing(store):
    assert retrieve_golden(store, "stored xss payload executes", 1.0) == []


def test_threshold_zero_returns_every_nonzero_match(store):
    got = retrieve_golden(store, "xss payload stored page", 0.0)
    assert [r.key for r in got] == oracle_golden_keys(store, "xss payload stored page", 0.0)
    assert 0 < len(got) < 50


def test_membership_matches_oracle_at_several_thresholds(store):
    for theta in (0.1, 0.3, 0.5, 0.7, 0.9):
        got = [r.key for r in retrieve_golden(store, "xss payload stored page", theta)]
        assert got == oracle_golden_keys(store, "xss payload stored page", theta)


def test_all_results_exceed_threshold_independently(store):
    theta = 0.3
    corpus = [r.text for r in store.records] + ["xss payload stored page"]
    for rec in retrieve_golden(store, "xss payload stored page", theta):
        s = oracle_similarity("xss payload stored page", rec.text, corpus, STOPWORDS)
        assert s > theta


def test_monotone_shrinkage(store):
    sizes = [len(retrieve_golden(store, "sql injection in the login form", t / 10))
             for t in range(11)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_sorted_by_similarity_then_key(store):
    got = retrieve_golden(store, "cross-site scripting stored payload page", 0.05)
    corpus = [r.text for r in store.records] + ["cross-site scripting stored payload page"]
    sims = [oracle_similarity("cross-site scripting stored payload page", r.text, corpus, STOPWORDS)
            for r in got]
    assert sims == sorted(sims, reverse=True)


def test_retrieval_pure(store):
    a = retrieve_golden(store, "csrf token missing", 0.2)
    b = retrieve_golden(store, "csrf token missing", 0.2)
    assert a == b


def test_store_round_trip(tmp_path, store):
    out = tmp_path / "va.jsonl"
    save_store(store, out)
    again = load_store(out)
    assert again.records == store.records
    assert (tmp_path / "va.index.json").exists()
