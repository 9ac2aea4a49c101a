"""Persona agent step: retrieve, recall, plan, reason, rank, remember.

Backends answer four calls (``plan``, ``reason``, ``synthesize``, ``judge``),
each returning ``(output, tokens_used)``. ``MockBackend`` is deterministic
and template driven; ``PipeBackend`` speaks line-delimited JSON to an
external process.
"""
from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from statistics import median
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence

from ._text import tokenize
from .exceptions import AgentStepError
from .memory import MemoryRecord, MemorySnapshot, MemorySystem, MemoryUpdate, retrieve_from
from .personas import Persona
from .retrieval import MEMORY, Index, RankedList, Retriever, ScoredDoc

ACTIONS = ("retrieve", "recall", "compare", "summarize")


@dataclass(frozen=True)
class Plan:
    steps: tuple[tuple[str, str], ...]
    budget_tokens: int

    def __post_init__(self):
        if not self.steps:
            raise ValueError("plan must have at least one step")
        if self.budget_tokens <= 0:
            raise ValueError("budget_tokens must be > 0")
        for action, _ in self.steps:
            if action not in ACTIONS:
                raise ValueError(f"unknown plan action {action!r}")

    @property
    def actions(self) -> list[str]:
        return [a for a, _ in self.steps]

    def to_dict(self) -> dict:
        return {"steps": [list(s) for s in self.steps], "budget_tokens": self.budget_tokens}


@dataclass(frozen=True)
class Note:
    claim: str
    doc_ids: tuple[str, ...]
    confidence: float

    def __post_init__(self):
        if not self.doc_ids:
            raise ValueError("a note must cite at least one doc")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"claim": self.claim, "doc_ids": list(self.doc_ids), "confidence": self.confidence}


@dataclass(frozen=True)
class Evidence:
    notes: tuple[Note, ...]
    tokens_used: int
    producer: str = ""

    @property
    def no_evidence(self) -> bool:
        return not self.notes

    def cited(self) -> set[str]:
        return {d for n in self.notes for d in n.doc_ids}

    def validate(self, pool_ids: set[str]) -> None:
        stray = self.cited() - set(pool_ids)
        if stray:
            raise ValueError(f"notes cite docs outside the evidence pool: {sorted(stray)}")

    def to_dict(self) -> dict:
        return {"producer": self.producer, "tokens_used": self.tokens_used, "notes": [n.to_dict() for n in self.notes]}


@dataclass(frozen=True)
class PoolDoc:
    doc_id: str
    score: float
    source: str
    text: str


class AgentBackend(Protocol):
    def plan(self, query, persona: Persona, ctx, token_cap: int) -> tuple[Plan, int]: ...

    def reason(
        self, plan: Plan, pool: Sequence[PoolDoc], working: Sequence[MemoryRecord], peer_notes: Sequence[Note] = ()
    ) -> tuple[list[Note], int]: ...

    def synthesize(self, query, items: Sequence[Mapping[str, Any]]) -> tuple[list[str], int]: ...

    def judge(self, query, outcomes: Sequence[Mapping[str, Any]]) -> tuple[list[float], int]: ...


def critique(notes: Sequence[Note], peer_notes: Sequence[Note]) -> list[Note]:
    """Halve confidence of notes whose peer support is below the median.

    Peer support of a doc is the summed confidence of peer notes citing it.
    """
    if not notes or not peer_notes:
        return list(notes)
    support_of = {}
    for pn in peer_notes:
        for d in pn.doc_ids:
            support_of[d] = support_of.get(d, 0.0) + pn.confidence
    supports = [sum(support_of.get(d, 0.0) for d in n.doc_ids) for n in notes]
    mid = median(supports)
    return [
        Note(n.claim, n.doc_ids, n.confidence / 2 if s < mid else n.confidence)
        for n, s in zip(notes, supports)
    ]


class MockBackend:
    """Deterministic stand-in for an LLM backend.

    Token counts are fixed functions of input sizes, so runs are reproducible.
    """

    def __init__(self, n_notes: int = 10, claim_tokens: int = 8, fail_for: Sequence[str] = ()):
        self.n_notes = n_notes
        self.claim_tokens = claim_tokens
        self.fail_for = set(fail_for)

    def plan(self, query, persona, ctx, token_cap):
        if persona.id in self.fail_for:
            raise RuntimeError("backend unavailable")
        text = query.text
        steps = [("retrieve", text), ("recall", text)]
        if persona.role == "critic":
            steps.append(("compare", "pool median"))
        if persona.role == "synthesizer":
            steps.append(("summarize", text))
        n_q = len(tokenize(text))
        tokens = 10 + 2 * n_q + 4 * len(steps) + 3 * len(ctx.handoff_notes)
        budget = max(1, min(token_cap, 200 + 100 * len(steps)))
        return Plan(tuple(steps), budget), tokens

    def reason(self, plan, pool, working, peer_notes=()):
        ranked = sorted(pool, key=lambda p: (-p.score, p.doc_id))
        context_tokens = sum(r.size for r in working)
        if not ranked:
            return [], 8 + context_tokens
        top = ranked[: self.n_notes]
        max_score = max(p.score for p in ranked)
        notes = []
        for p in top:
            conf = p.score / max_score if max_score > 0 else 0.0
            claim = " ".join(tokenize(p.text)[: self.claim_tokens])
            notes.append(Note(claim, (p.doc_id,), min(1.0, max(0.0, conf))))
        if "compare" in plan.actions:
            mid = median(p.score for p in ranked)
            score_of = {p.doc_id: p.score for p in ranked}
            notes = [
                Note(n.claim, n.doc_ids, n.confidence / 2 if score_of[n.doc_ids[0]] < mid else n.confidence)
                for n in notes
            ]
        tokens = 20 + sum(min(len(tokenize(p.text)), 64) for p in top) + context_tokens
        if peer_notes:
            notes = critique(notes, peer_notes)
            tokens += 10 + 3 * len(notes) + len(peer_notes)
        return notes, tokens

    def synthesize(self, query, items):
        sentences = []
        for item in items:
            marker = "Possibly: " if item["hedged"] else ""
            sentences.append(f"{marker}{item['claim']} [{item['doc_id']}]")
        return sentences, 5 + sum(len(tokenize(s)) for s in sentences)

    def judge(self, query, outcomes):
        weights = []
        for out in outcomes:
            notes = out["notes"]
            top = out["ranking"][: max(1, len(notes))]
            if not notes or not top:
                weights.append(0.0)
                continue
            mean_conf = sum(n["confidence"] for n in notes) / len(notes)
            cited = {d for n in notes for d in n["doc_ids"]}
            coverage = sum(1 for d in top if d in cited) / len(top)
            weights.append(mean_conf * coverage)
        return weights, 15 + 4 * len(outcomes) + sum(len(o["notes"]) for o in outcomes)


class PipeBackend:
    """Backend living in another process, one JSON message per line.

    Request: ``{"type": <call>, "payload": {...}}``; response:
    ``{"output": ..., "tokens_used": int}``.
    """

    def __init__(self, command: Sequence[str]):
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

    def _call(self, kind: str, payload: Mapping[str, Any]):
        self.proc.stdin.write(json.dumps({"type": kind, "payload": payload}) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("backend process closed the pipe")
        reply = json.loads(line)
        if "error" in reply:
            raise RuntimeError(reply["error"])
        tokens = int(reply["tokens_used"])
        if tokens < 1:
            raise RuntimeError("backend reported tokens_used < 1")
        return reply["output"], tokens

    def plan(self, query, persona, ctx, token_cap):
        out, tokens = self._call(
            "plan", {"query": query.text, "persona": list(persona.facets), "token_cap": token_cap}
        )
        return Plan(tuple(tuple(s) for s in out["steps"]), int(out["budget_tokens"])), tokens

    def reason(self, plan, pool, working, peer_notes=()):
        out, tokens = self._call(
            "reason",
            {
                "plan": plan.to_dict(),
                "pool": [p.__dict__ for p in pool],
                "working": [r.text for r in working],
                "peer_notes": [n.to_dict() for n in peer_notes],
            },
        )
        return [Note(n["claim"], tuple(n["doc_ids"]), float(n["confidence"])) for n in out], tokens

    def synthesize(self, query, items):
        return self._call("synthesize", {"query": query.text, "items": list(items)})

    def judge(self, query, outcomes):
        return self._call("judge", {"query": query.text, "outcomes": list(outcomes)})

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=5)


def rank(d_web: Sequence[ScoredDoc], d_mem: Sequence[ScoredDoc], persona_id: str, familiarity_boost: float = 1.2) -> RankedList:
    """Merge web and memory docs; memory scores get the familiarity boost, duplicates keep the max."""
    best: dict[str, ScoredDoc] = {}
    for d in d_web:
        if d.doc_id not in best or d.score > best[d.doc_id].score:
            best[d.doc_id] = d
    for d in d_mem:
        boosted = ScoredDoc(d.doc_id, d.score * familiarity_boost, MEMORY)
        if d.doc_id not in best or boosted.score > best[d.doc_id].score:
            best[d.doc_id] = boosted
    return RankedList.from_scores(best.values(), persona_id)


@dataclass
class AgentStepResult:
    ranking: RankedList
    evidence: Evidence
    plan: Plan
    pool: tuple[PoolDoc, ...]
    snapshot: MemorySnapshot
    update: MemoryUpdate
    tokens: int
    context_size: int
    backend_calls: int = 2


class PersonaAgent:
    """Runs one persona step against shared retriever, memory and backend.

    Args:
        retriever: connector returning ``ScoredDoc`` lists.
        memory: shared memory system.
        backend: plan/reason backend.
        doc_text: lookup from doc id to text (for the evidence pool).
    """

    def __init__(
        self,
        retriever: Retriever,
        memory: MemorySystem,
        backend: AgentBackend,
        doc_text: Callable[[str], Optional[str]],
        top_n: int = 10,
        recall_limit: int = 5,
        familiarity_boost: float = 1.2,
        token_cap: int = 4000,
    ):
        self.retriever = retriever
        self.memory = memory
        self.backend = backend
        self.doc_text = doc_text
        self.top_n = top_n
        self.recall_limit = recall_limit
        self.familiarity_boost = familiarity_boost
        self.token_cap = token_cap

    @classmethod
    def from_index(cls, index: Index, retriever, memory, backend, cfg) -> "PersonaAgent":
        def text_of(doc_id):
            return index.docs[doc_id].text if doc_id in index.docs else None

        return cls(
            retriever,
            memory,
            backend,
            text_of,
            top_n=cfg.retrieval.top_n,
            recall_limit=cfg.memory.retrieve_limit,
            familiarity_boost=cfg.agent.familiarity_boost,
            token_cap=cfg.agent.token_cap,
        )

    def memory_docs(self, recalled: Sequence[tuple[MemoryRecord, float]], scale: float) -> list[ScoredDoc]:
        out: dict[str, float] = {}
        for rec, score in recalled:
            ids = rec.payload.get("doc_ids") or rec.payload.get("clicks") or ()
            for d in ids:
                if self.doc_text(d) is None:
                    continue
                out[d] = max(out.get(d, 0.0), score * scale)
        return [ScoredDoc(d, s, MEMORY) for d, s in sorted(out.items())]

    def step(self, query, ctx, persona: Persona, task_state: Mapping[str, Any] | None = None) -> AgentStepResult:
        """Run the step without writing memory; the caller commits ``result.update``."""
        try:
            snapshot = self.memory.read_memory(query, ctx, actor=persona.id)
            top_n = self.top_n * (2 if persona.role == "librarian" else 1)
            d_web = list(self.retriever.retrieve(query, persona, ctx, top_n))
            recalled = retrieve_from(snapshot.episodic, snapshot.semantic, query, self.recall_limit)
            scale = max((d.score for d in d_web), default=1.0)
            d_mem = self.memory_docs(recalled, scale)
            plan, t_plan = self.backend.plan(query, persona, ctx, self.token_cap)
            pool_scores: dict[str, ScoredDoc] = {}
            for d in d_web + d_mem:
                if d.doc_id not in pool_scores or d.score > pool_scores[d.doc_id].score:
                    pool_scores[d.doc_id] = d
            pool = tuple(
                PoolDoc(d.doc_id, d.score, d.source, self.doc_text(d.doc_id) or "")
                for d in sorted(pool_scores.values(), key=lambda d: (-d.score, d.doc_id))
            )
            notes, t_reason = self.backend.reason(plan, pool, snapshot.working)
            evidence = Evidence(tuple(notes), t_reason, persona.id)
            evidence.validate({p.doc_id for p in pool})
            ranking = rank(d_web, d_mem, persona.id, self.familiarity_boost)
        except AgentStepError:
            raise
        except Exception as exc:
            raise AgentStepError(persona.id, str(exc)) from exc
        tokens = t_plan + t_reason
        context_size = sum(r.size for r in snapshot.working) + sum(r.size for r, _ in recalled)
        trace = " ".join([query.text, *(n.claim for n in evidence.notes[:2])])
        update = MemoryUpdate(
            user_id=ctx.owner,
            session_id=ctx.session_id,
            query=query.text,
            turn=ctx.turn_index,
            shown=ranking.doc_ids[:10],
            notes=[n.claim for n in evidence.notes],
            trace=trace,
            task_state=dict(task_state or {}),
            provenance={"session_id": ctx.session_id, "agent_id": persona.id, "origin": "agent_step"},
            accessed=[r.record_id for r, _ in recalled],
        )
        return AgentStepResult(ranking, evidence, plan, pool, snapshot, update, tokens, context_size)

    def agent_step(self, query, ctx, persona: Persona, task_state=None) -> tuple[RankedList, Evidence]:
        """Full step including the memory write."""
        result = self.step(query, ctx, persona, task_state)
        self.memory.write_memory(result.update)
        return result.ranking, result.evidence
