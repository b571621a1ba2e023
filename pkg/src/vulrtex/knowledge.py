"""Golden-knowledge store: advisory texts retrieved to correct factual errors.

Records come from external vulnerability-awareness datasets and are matched
against reasoning-path descriptions by TF-IDF similarity with a strict
threshold: only records scoring above theta_sim come back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateKey
from .textindex import TfIdfIndex, build_index, similarity


@dataclass(frozen=True)
class KnowledgeRecord:
    source: str
    key: str
    text: str
    cwe_id: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"knowledge record {self.source}/{self.key} has empty text")

    def to_dict(self) -> dict:
        return {"source": self.source, "key": self.key, "text": self.text,
                "cwe_id": self.cwe_id}

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeRecord":
        return cls(d["source"], d["key"], d["text"], d.get("cwe_id"))


class KnowledgeStore:
    """Immutable after ingest; retrieval is a pure function of the store."""

    def __init__(self, records: list[KnowledgeRecord]):
        seen: set[tuple[str, str]] = set()
        for rec in records:
            pair = (rec.source, rec.key)
            if pair in seen:
                raise DuplicateKey(f"duplicate knowledge record {rec.source}/{rec.key}")
            seen.add(pair)
        self.records: tuple[KnowledgeRecord, ...] = tuple(records)
        self.index: TfIdfIndex | None = (
            build_index([r.text for r in self.records]) if self.records else None)

    def __len__(self) -> int:
        return len(self.records)


def ingest(records: list[KnowledgeRecord]) -> KnowledgeStore:
    return KnowledgeStore(records)


def retrieve_golden(store: KnowledgeStore, path_text: str,
                    theta_sim: float) -> list[KnowledgeRecord]:
    """Records whose text scores strictly above theta_sim against path_text.

    Similarities are computed over an index spanning the stored texts plus
    the query, so query-only terms still contribute. Results are sorted by
    similarity descending, ties broken by key.
    """
    if not 0.0 <= theta_sim <= 1.0:
        raise ValueError("theta_sim must be in [0, 1]")
    if not store.records:
        return []
    idx = build_index([r.text for r in store.records] + [path_text])
    scored = [(similarity(idx, path_text, r.text), r) for r in store.records]
    kept = [(s, r) for s, r in scored if s > theta_sim]
    kept.sort(key=lambda pair: (-pair[0], pair[1].key))
    return [r for _, r in kept]


def load_store(path: str | Path) -> KnowledgeStore:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            records.append(KnowledgeRecord.from_dict(json.loads(line)))
    return KnowledgeStore(records)


def save_store(store: KnowledgeStore, path: str | Path,
               index_path: str | Path | None = None) -> None:
    path = Path(path)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in store.records]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    if index_path is None:
        index_path = path.with_suffix(".index.json")
    if store.index is not None:
        store.index.save(index_path)
