"""Score calibration, rank fusion, intent-aware diversification, synthesis."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .agent import Evidence, MockBackend
from .metrics import relevance_prob
from .retrieval import RankedList, ScoredDoc


def calibrate(ranking: RankedList) -> RankedList:
    """Per-list min-max scaling onto [0, 1]; order is preserved."""
    if not len(ranking):
        raise ValueError("cannot calibrate an empty ranking")
    scores = [d.score for d in ranking]
    lo, hi = min(scores), max(scores)
    if len(ranking) == 1 or hi == lo:
        mapped = [1.0] * len(scores)
    else:
        mapped = [(s - lo) / (hi - lo) for s in scores]
    return RankedList(
        tuple(ScoredDoc(d.doc_id, m, d.source) for d, m in zip(ranking, mapped)),
        ranking.producer,
    )


def _doc_ids(ranking) -> list[str]:
    return ranking.doc_ids if isinstance(ranking, RankedList) else list(ranking)


def weighted_fuse(rankings: Sequence, agent_weights: Sequence[float], k0: float = 60.0) -> RankedList:
    """Credibility-weighted reciprocal rank fusion: sum_i w_i / (k0 + rank_i(d))."""
    if len(agent_weights) != len(rankings):
        raise ValueError(f"{len(agent_weights)} weights for {len(rankings)} rankings")
    if k0 <= 0:
        raise ValueError("k0 must be > 0")
    if any(w < 0 for w in agent_weights):
        raise ValueError("fusion weights must be non-negative")
    fused: dict[str, float] = {}
    for ranking, w in zip(rankings, agent_weights):
        for pos, doc_id in enumerate(_doc_ids(ranking), start=1):
            fused[doc_id] = fused.get(doc_id, 0.0) + w / (k0 + pos)
    return RankedList.from_scores((ScoredDoc(d, s) for d, s in fused.items()), "fused")


def rrf_fuse(rankings: Sequence, k0: float = 60.0) -> RankedList:
    """Reciprocal rank fusion with 1-based ranks; ties by doc id."""
    if not rankings:
        raise ValueError("need at least one ranking")
    return weighted_fuse(rankings, [1.0] * len(rankings), k0)


def _err_gain(r_probs: Mapping[str, float], not_yet: Mapping[str, float], p: Mapping[str, float], pos: int) -> float:
    return sum(p[t] * r_probs[t] * not_yet[t] for t in p) / pos


def diversify_err_ia(
    candidates: Sequence[str] | RankedList,
    intent_dist: Mapping[str, float],
    grades: Mapping[str, Mapping[str, int]],
    k: int,
    g_max: int = 4,
) -> RankedList:
    """Greedy ERR-IA reordering of a candidate pool; returns at most ``k`` docs.

    Args:
        candidates: doc ids (or a ranking) forming the pool.
        intent_dist: intent id -> probability.
        grades: doc id -> {intent id -> grade}.
        k: list length wanted.
    """
    pool = sorted(set(_doc_ids(candidates)))
    p = {t: float(w) for t, w in intent_dist.items() if w > 0}
    not_yet = {t: 1.0 for t in p}
    chosen: list[ScoredDoc] = []
    for pos in range(1, min(k, len(pool)) + 1):
        best_id, best_gain = None, -1.0
        for doc_id in pool:
            r = {t: relevance_prob(grades.get(doc_id, {}).get(t, 0), g_max) for t in p}
            gain = _err_gain(r, not_yet, p, pos)
            if gain > best_gain:  # pool is id-sorted, so ties keep the smaller id
                best_id, best_gain = doc_id, gain
        pool.remove(best_id)
        for t in p:
            not_yet[t] *= 1.0 - relevance_prob(grades.get(best_id, {}).get(t, 0), g_max)
        chosen.append(ScoredDoc(best_id, best_gain))
    return RankedList(tuple(chosen), "fused")


@dataclass(frozen=True)
class Sentence:
    text: str
    doc_ids: tuple[str, ...]
    hedged: bool

    def to_dict(self) -> dict:
        return {"text": self.text, "doc_ids": list(self.doc_ids), "hedged": self.hedged}


@dataclass(frozen=True)
class Answer:
    sentences: tuple[Sentence, ...]
    fused_topk: tuple[str, ...]
    tokens_used: int

    @property
    def no_result(self) -> bool:
        return not self.sentences

    def to_dict(self) -> dict:
        return {
            "sentences": [s.to_dict() for s in self.sentences],
            "fused_topk": list(self.fused_topk),
            "tokens_used": self.tokens_used,
            "no_result": self.no_result,
        }


def synthesize(
    query,
    notes: Sequence[Evidence],
    fused: RankedList,
    backend=None,
    k: int = 5,
    hedge_threshold: float = 0.5,
) -> Answer:
    """One cited sentence per top-k fused doc that some note supports."""
    if not len(fused):
        return Answer((), (), 0)
    backend = backend or MockBackend()
    top = fused.doc_ids[:k]
    items = []
    for doc_id in top:
        support = [n for ev in notes for n in ev.notes if doc_id in n.doc_ids]
        if not support:
            continue
        best = max(support, key=lambda n: (n.confidence, n.claim))
        items.append(
            {
                "doc_id": doc_id,
                "claim": best.claim,
                "confidence": best.confidence,
                "hedged": best.confidence < hedge_threshold,
            }
        )
    texts, tokens = backend.synthesize(query, items)
    sentences = tuple(Sentence(t, (it["doc_id"],), it["hedged"]) for t, it in zip(texts, items))
    return Answer(sentences, tuple(top), tokens)


def citation_coverage(answer: Answer, fused: Optional[RankedList] = None) -> float:
    """Fraction of sentences citing at least one doc in the fused top-k."""
    if not answer.sentences:
        return 1.0
    allowed = set(answer.fused_topk) if fused is None else set(fused.doc_ids[: len(answer.fused_topk) or None])
    ok = sum(1 for s in answer.sentences if set(s.doc_ids) & allowed)
    return ok / len(answer.sentences)
