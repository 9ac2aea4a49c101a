"""Graded ranking metrics: nDCG@k, ERR@k, ERR-IA@k, subtopic coverage, utility per token.

Rankings are sequences of doc ids. Grades are mappings ``doc_id -> grade``
for a single intent, or ``doc_id -> {intent: grade}`` for intent-aware
metrics. Missing docs have grade 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ._validation import check_distribution


def relevance_prob(grade: int, g_max: int = 4) -> float:
    """Cascade stop probability for a graded doc: (2^g - 1) / 2^g_max."""
    return (2.0**grade - 1.0) / 2.0**g_max


def _ids(ranking) -> list[str]:
    return list(ranking.doc_ids) if hasattr(ranking, "doc_ids") else list(ranking)


@dataclass(frozen=True)
class Judgment:
    grades: Mapping[str, Mapping[str, int]]
    intent_dist: Mapping[str, float]

    def __post_init__(self):
        check_distribution(self.intent_dist, "intent_dist")

    def for_intent(self, intent: str) -> dict[str, int]:
        return {d: int(g.get(intent, 0)) for d, g in self.grades.items()}

    @property
    def dominant_intent(self) -> str:
        return max(sorted(self.intent_dist), key=lambda t: self.intent_dist[t])


def dcg(gains: Iterable[int]) -> float:
    return sum((2.0**g - 1.0) / math.log2(i + 1) for i, g in enumerate(gains, start=1))


def ndcg_at_k(ranking, grades: Mapping[str, int], k: int) -> float:
    """nDCG with exponential gain and log2 discount; zero IDCG gives 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = _ids(ranking)[:k]
    got = dcg(grades.get(d, 0) for d in ids)
    ideal = dcg(sorted(grades.values(), reverse=True)[:k])
    return got / ideal if ideal > 0 else 0.0


def err_at_k(ranking, grades: Mapping[str, int], k: int, g_max: int = 4) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    total, not_yet = 0.0, 1.0
    for r, d in enumerate(_ids(ranking)[:k], start=1):
        rp = relevance_prob(grades.get(d, 0), g_max)
        total += not_yet * rp / r
        not_yet *= 1.0 - rp
    return total


def err_ia_at_k(ranking, judgment: Judgment, k: int, g_max: int = 4) -> float:
    return sum(
        p * err_at_k(ranking, judgment.for_intent(t), k, g_max) for t, p in judgment.intent_dist.items() if p > 0
    )


def subtopic_coverage(ranking, judgment: Judgment, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    intents = [t for t, p in judgment.intent_dist.items() if p > 0]
    ids = _ids(ranking)[:k]
    if not ids or not intents:
        return 0.0
    covered = sum(1 for t in intents if any(judgment.grades.get(d, {}).get(t, 0) > 0 for d in ids))
    return covered / len(intents)


def utility_per_token(turns: Sequence[Mapping]) -> float:
    """Total reward over total tokens across a session's turns."""
    tokens = sum(t["tokens"] for t in turns)
    if tokens <= 0:
        raise ValueError("utility_per_token needs a positive token total")
    return sum(t["reward"] for t in turns) / tokens
