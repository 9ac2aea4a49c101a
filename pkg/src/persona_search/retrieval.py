"""Local corpus index and the persona-conditioned retriever.

The retriever stands in for external search connectors. Anything with a
``retrieve(query, persona, ctx, top_n)`` method returning ``ScoredDoc``
objects can be plugged into an agent instead.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from ._text import tokenize
from .exceptions import CorpusError

WEB = "web"
MEMORY = "memory"


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    domain: str = ""
    intent_grades: Mapping[str, int] = field(default_factory=dict)

    def grade(self, intent: str) -> int:
        return int(self.intent_grades.get(intent, 0))

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "domain": self.domain,
            "intent_grades": dict(self.intent_grades),
        }


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    source: str = WEB

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score for {self.doc_id}")


def _order_key(d: ScoredDoc):
    return (-d.score, d.doc_id)


@dataclass(frozen=True)
class RankedList:
    """Docs ordered by (score desc, doc_id asc), no duplicates."""

    docs: tuple[ScoredDoc, ...]
    producer: str = "fused"

    def __post_init__(self):
        ids = [d.doc_id for d in self.docs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate doc ids in ranked list")

    @classmethod
    def from_scores(cls, docs: Iterable[ScoredDoc], producer: str) -> "RankedList":
        return cls(tuple(sorted(docs, key=_order_key)), producer)

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.docs]

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)

    def to_dict(self) -> dict:
        return {
            "producer": self.producer,
            "docs": [{"doc_id": d.doc_id, "score": d.score, "source": d.source} for d in self.docs],
        }


def load_corpus(path: str | Path, g_max: int = 4) -> list[Document]:
    """Read a JSONL corpus: one ``{doc_id, text, domain, intent_grades}`` per line."""
    docs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            grades = {str(k): int(v) for k, v in (row.get("intent_grades") or {}).items()}
            bad = {k: v for k, v in grades.items() if not 0 <= v <= g_max}
            if bad:
                raise CorpusError(f"line {lineno}: grades outside [0, {g_max}]: {bad}")
            docs.append(Document(str(row["doc_id"]), row["text"], row.get("domain", ""), grades))
    return docs


def write_corpus(docs: Sequence[Document], path: str | Path) -> None:
    with open(path, "w") as fh:
        for d in docs:
            fh.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")


class Index:
    """Inverted index with BM25 scoring.

    Args:
        documents: corpus; must be non-empty with unique ids.
        k1, b: BM25 constants.
    """

    def __init__(self, documents: Sequence[Document], k1: float = 1.2, b: float = 0.75):
        if not documents:
            raise CorpusError("cannot index an empty corpus")
        self.k1 = k1
        self.b = b
        self.docs: dict[str, Document] = {}
        self.doc_tokens: dict[str, list[str]] = {}
        self.postings: dict[str, dict[str, int]] = {}
        for doc in documents:
            if doc.doc_id in self.docs:
                raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
            self.docs[doc.doc_id] = doc
            tokens = tokenize(doc.text)
            self.doc_tokens[doc.doc_id] = tokens
            for token, tf in Counter(tokens).items():
                self.postings.setdefault(token, {})[doc.doc_id] = tf
        self.postings = dict(sorted(self.postings.items()))
        self.n_docs = len(self.docs)
        self.avg_len = sum(len(t) for t in self.doc_tokens.values()) / self.n_docs

    def df(self, token: str) -> int:
        return len(self.postings.get(token, ()))

    def idf(self, token: str) -> float:
        df = self.df(token)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def stats(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "n_terms": len(self.postings),
            "avg_doc_len": self.avg_len,
            "n_postings": sum(len(p) for p in self.postings.values()),
        }

    def score(self, query_tokens: Sequence[str]) -> dict[str, float]:
        """BM25 score for every doc sharing at least one query token."""
        scores: dict[str, float] = {}
        for token in dict.fromkeys(query_tokens):
            posting = self.postings.get(token)
            if not posting:
                continue
            idf = self.idf(token)
            for doc_id, tf in posting.items():
                norm = self.k1 * (1 - self.b + self.b * len(self.doc_tokens[doc_id]) / self.avg_len)
                scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (self.k1 + 1) / (tf + norm)
        return scores

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self.docs

    def __getitem__(self, doc_id: str) -> Document:
        return self.docs[doc_id]


def index_corpus(documents: Sequence[Document], k1: float = 1.2, b: float = 0.75) -> Index:
    return Index(documents, k1=k1, b=b)


class Retriever(Protocol):
    """Connector interface: anything that can answer a persona-scoped query."""

    def retrieve(self, query, persona, ctx, top_n: int) -> list[ScoredDoc]: ...


class LocalRetriever:
    """BM25 over a local index with a multiplicative persona-domain boost."""

    def __init__(self, index: Index, domain_boost: float = 1.5):
        if domain_boost < 1:
            raise ValueError("domain_boost must be >= 1")
        self.index = index
        self.domain_boost = domain_boost

    def retrieve(self, query, persona, ctx=None, top_n: int = 10) -> list[ScoredDoc]:
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        tokens = query.tokens if hasattr(query, "tokens") else tokenize(str(query))
        scored = []
        for doc_id, s in self.index.score(tokens).items():
            if persona is not None and self.index[doc_id].domain == persona.domain:
                s *= self.domain_boost
            scored.append(ScoredDoc(doc_id, s, WEB))
        scored.sort(key=_order_key)
        return scored[:top_n]


def web_retrieve(retriever: Retriever, query, persona, ctx, top_n: int) -> list[ScoredDoc]:
    return retriever.retrieve(query, persona, ctx, top_n)
