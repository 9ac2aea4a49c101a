"""Persona coordinator: gating, top-k activation, protocol choice and execution."""
from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ._text import tokenize
from .agent import AgentStepResult, Evidence, Note, PersonaAgent
from .arbiter import Answer, calibrate, diversify_err_ia, rrf_fuse, synthesize, weighted_fuse
from .config import Config
from .context import ContextEncoder, ContextFeatures, Query, SessionContext, novelty
from .exceptions import AgentStepError, ProtocolError
from .learning import Arm, LinUCBRouter, ThompsonRouter
from .memory import MemorySystem
from .personas import PersonaRegistry
from .retrieval import Index, RankedList, ScoredDoc

INDEPENDENT = "independent"
RELAY = "relay"
DEBATE = "debate"
PROTOCOLS = (INDEPENDENT, RELAY, DEBATE)


@dataclass(frozen=True)
class GateScores:
    persona_ids: tuple[str, ...]
    logits: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-9 or any(w < 0 for w in self.weights):
            raise ValueError("gate weights must form a distribution")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.persona_ids, self.weights))


def softmax(logits: Sequence[float]) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class Protocol:
    kind: str
    agents: tuple[str, ...]
    r_max: int = 0

    def __post_init__(self):
        if self.kind not in PROTOCOLS:
            raise ProtocolError(f"unknown protocol {self.kind!r}")
        if not self.agents:
            raise ProtocolError("protocol needs at least one agent")
        if self.kind == DEBATE and (len(self.agents) < 2 or self.r_max < 1):
            raise ProtocolError("debate needs >= 2 agents and r_max >= 1")
        if self.kind == RELAY and len(self.agents) < 2:
            raise ProtocolError("relay needs a chain of length >= 2")


@dataclass
class ProtocolOutcome:
    protocol: str
    rankings: list[RankedList] = field(default_factory=list)
    notes: list[Evidence] = field(default_factory=list)
    agents: list[str] = field(default_factory=list)
    steps: list[AgentStepResult] = field(default_factory=list)
    tokens_total: int = 0
    rounds_executed: int = 0
    failed: list[str] = field(default_factory=list)
    credibility: Optional[list[float]] = None
    critical_calls: int = 0
    timing_ms: dict[str, float] = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    @property
    def context_sizes(self) -> list[int]:
        return [s.context_size for s in self.steps]


@dataclass
class TurnResult:
    answer: Answer
    fused: RankedList
    log: dict[str, Any]
    outcome: ProtocolOutcome
    features: ContextFeatures
    wall_ms: float = 0.0


def reformulate(query: Query, evidence: Evidence, cap: int = 32) -> Query:
    """Original tokens followed by the top note's claim tokens, capped."""
    if not evidence.notes:
        return query
    top = max(evidence.notes, key=lambda n: n.confidence)
    tokens = list(dict.fromkeys(query.tokens + tokenize(top.claim)))[:cap]
    return query.with_text(" ".join(tokens))


def _reorder(base: RankedList, notes: Sequence[Note]) -> RankedList:
    """Noted docs by confidence first, then the rest in their original order."""
    conf: dict[str, float] = {}
    for n in notes:
        for d in n.doc_ids:
            conf[d] = max(conf.get(d, 0.0), n.confidence)
    pos = {d: i for i, d in enumerate(base.doc_ids)}
    order = sorted(base.doc_ids, key=lambda d: (0 if d in conf else 1, -conf.get(d, 0.0), pos[d]))
    n = len(order)
    docs = tuple(
        ScoredDoc(d, 1.0 - i / n, base.docs[pos[d]].source) for i, d in enumerate(order)
    )
    return RankedList(docs, base.producer)


class Coordinator:
    """Routes a query to persona agents and fuses what they return.

    Args:
        registry: persona registry (judges are never routed to).
        encoder: context feature map.
        memory: shared memory system.
        agent: persona agent runner.
        index: corpus index, used for intent grades during diversification.
        cfg: full configuration.
        router: optional bandit; when present it picks (personas, protocol).
    """

    def __init__(
        self,
        registry: PersonaRegistry,
        encoder: ContextEncoder,
        memory: MemorySystem,
        agent: PersonaAgent,
        index: Optional[Index],
        cfg: Config,
        router: LinUCBRouter | ThompsonRouter | None = None,
    ):
        self.registry = registry
        self.encoder = encoder
        self.memory = memory
        self.agent = agent
        self.backend = agent.backend
        self.index = index
        self.cfg = cfg
        self.router = router
        cc = cfg.coordinator
        self.routable = registry.routable_ids()
        rng = np.random.default_rng(cc.seed)
        self.W = rng.standard_normal((registry.dim, encoder.d_phi)) / math.sqrt(encoder.d_phi)
        self._rng = np.random.default_rng(cc.seed + 1)
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- gating ------------------------------------------------------------

    def predict_gate(self, query: Query, ctx: SessionContext, features: ContextFeatures | None = None) -> GateScores:
        if not self.routable:
            raise ProtocolError("no routable personas registered")
        phi = (features or self.encoder.encode(query, ctx)).vector
        ids = tuple(self.routable)
        if self.router is not None:
            indices = (
                self.router.ucb(phi) if isinstance(self.router, LinUCBRouter) else self.router.decision_function(phi[None])[0]
            )
            best: dict[str, float] = {}
            for arm_id, val in zip(self.router.arm_ids, indices):
                for pid in Arm.parse(arm_id).personas:
                    best[pid] = max(best.get(pid, -math.inf), float(val))
            floor = min(best.values()) if best else 0.0
            logits = np.array([best.get(pid, floor) for pid in ids])
        else:
            psi = self.registry.embedding_matrix(ids)
            logits = psi @ (self.W @ phi)
        weights = softmax(logits)
        return GateScores(ids, tuple(float(l) for l in logits), tuple(float(w) for w in weights))

    def k_from_budget(self, budget_tokens: int) -> int:
        if budget_tokens <= 0:
            raise ValueError("budget must be > 0")
        cc = self.cfg.coordinator
        return int(min(max(budget_tokens // cc.est_tokens_per_agent, 1), cc.k_max))

    @staticmethod
    def top_k_personas(gate: GateScores, k: int) -> list[str]:
        if k > len(gate.persona_ids):
            raise ValueError(f"k={k} exceeds the {len(gate.persona_ids)} routable personas")
        order = sorted(zip(gate.persona_ids, gate.weights), key=lambda pw: (-pw[1], pw[0]))
        return [pid for pid, _ in order[:k]]

    @staticmethod
    def gate_confidence(gate: GateScores) -> float:
        return max(gate.weights)

    def difficulty(self, query: Query, novelty_value: float) -> float:
        cc = self.cfg.coordinator
        a1, a2, a3 = cc.difficulty_weights
        length = min(len(query.tokens) / cc.max_query_len, 1.0)
        n_intents = max(1, sum(1 for p in query.intents().values() if p >= cc.intent_min_prob))
        intents = min((n_intents - 1) / max(cc.max_intents - 1, 1), 1.0)
        return a1 * length + a2 * intents + a3 * novelty_value

    def select_protocol(self, query: Query, ctx: SessionContext, gate: GateScores, novelty_value: float | None = None) -> str:
        """Difficulty heuristic: low -> independent, mid -> relay, high -> debate."""
        cc = self.cfg.coordinator
        if cc.force_protocol:
            return cc.force_protocol
        if novelty_value is None:
            novelty_value = self._novelty(query, ctx)
        d = self.difficulty(query, novelty_value)
        if d < cc.tau1:
            return INDEPENDENT
        if d < cc.tau2:
            return RELAY
        return DEBATE

    def _novelty(self, query: Query, ctx: SessionContext) -> float:
        snap = self.memory.read_memory(query, ctx, actor="coordinator")
        return novelty(query, snap.episodic_queries())

    # -- protocols ---------------------------------------------------------

    def _run_steps(self, jobs: Sequence[tuple[Query, SessionContext, str]], task_state) -> list:
        def one(job):
            q, c, pid = job
            try:
                return self.agent.step(q, c, self.registry.get(pid), task_state)
            except AgentStepError as exc:
                return exc

        workers = self.cfg.coordinator.max_workers
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(one, jobs))
        return [one(j) for j in jobs]

    def _collect(self, outcome: ProtocolOutcome, pid: str, res) -> bool:
        if isinstance(res, Exception):
            outcome.failed.append(pid)
            return False
        outcome.agents.append(pid)
        outcome.steps.append(res)
        outcome.rankings.append(res.ranking)
        outcome.notes.append(res.evidence)
        outcome.tokens_total += res.tokens
        return True

    def run_independent(self, query: Query, ctx: SessionContext, agents: Sequence[str], task_state=None) -> ProtocolOutcome:
        if not agents:
            raise ProtocolError("independent protocol needs >= 1 agent")
        outcome = ProtocolOutcome(INDEPENDENT)
        results = self._run_steps([(query, ctx, pid) for pid in agents], task_state)
        for pid, res in zip(agents, results):
            self._collect(outcome, pid, res)
        outcome.critical_calls = max((s.backend_calls for s in outcome.steps), default=0)
        return outcome

    def run_relay(self, query: Query, ctx: SessionContext, chain: Sequence[str], task_state=None) -> ProtocolOutcome:
        if len(chain) < 2:
            raise ProtocolError("relay needs a chain of length >= 2")
        outcome = ProtocolOutcome(RELAY)
        q, c = query, ctx
        for pid in chain:
            res = self._run_steps([(q, c, pid)], task_state)[0]
            if not self._collect(outcome, pid, res):
                break
            outcome.critical_calls += res.backend_calls
            q = reformulate(query, res.evidence, self.cfg.coordinator.relay_token_cap)
            c = ctx.with_handoff(res.evidence.notes)
        return outcome

    def run_debate(self, query: Query, ctx: SessionContext, agents: Sequence[str], r_max: int, task_state=None) -> ProtocolOutcome:
        """Round 0 independent steps, then up to ``r_max`` critique rounds and a judge."""
        if len(agents) < 2:
            raise ProtocolError("debate needs >= 2 agents")
        if r_max < 1:
            raise ProtocolError("debate needs r_max >= 1")
        outcome = ProtocolOutcome(DEBATE)
        results = self._run_steps([(query, ctx, pid) for pid in agents], task_state)
        for pid, res in zip(agents, results):
            self._collect(outcome, pid, res)
        outcome.critical_calls = max((s.backend_calls for s in outcome.steps), default=0)
        base = list(outcome.rankings)
        if len(outcome.steps) >= 2:
            current_notes = [list(ev.notes) for ev in outcome.notes]
            current_rank = list(outcome.rankings)
            for rnd in range(1, r_max + 1):
                new_notes, new_rank = [], []
                for i, step in enumerate(outcome.steps):
                    peers = [n for j, ns in enumerate(current_notes) if j != i for n in ns]
                    notes, tokens = self.backend.reason(step.plan, step.pool, step.snapshot.working, peer_notes=peers)
                    outcome.tokens_total += tokens
                    new_notes.append(list(notes))
                    new_rank.append(_reorder(base[i], notes))
                outcome.critical_calls += 1
                outcome.rounds_executed = rnd
                changed = any(a.doc_ids != b.doc_ids for a, b in zip(new_rank, current_rank))
                current_notes, current_rank = new_notes, new_rank
                if not changed:
                    break
            outcome.rankings = current_rank
            outcome.notes = [
                Evidence(tuple(ns), ev.tokens_used, ev.producer) for ns, ev in zip(current_notes, outcome.notes)
            ]
        payload = [
            {"agent": pid, "ranking": r.doc_ids, "notes": [n.to_dict() for n in ev.notes]}
            for pid, r, ev in zip(outcome.agents, outcome.rankings, outcome.notes)
        ]
        if payload:
            weights, tokens = self.backend.judge(query, payload)
            outcome.tokens_total += tokens
            outcome.credibility = [float(w) for w in weights]
            outcome.critical_calls += 1
        return outcome

    # -- fusion ------------------------------------------------------------

    def _grades(self, doc_ids: Sequence[str]) -> dict[str, dict[str, int]]:
        if self.index is None:
            return {}
        return {d: dict(self.index.docs[d].intent_grades) for d in doc_ids if d in self.index.docs}

    def fuse(self, query: Query, outcome: ProtocolOutcome, gate: GateScores) -> RankedList:
        ac = self.cfg.arbiter
        lists = [calibrate(r) for r in outcome.rankings if len(r)]
        if not lists:
            return RankedList((), "fused")
        producers = [r.producer for r in outcome.rankings if len(r)]
        weights = None
        if outcome.credibility is not None:
            cred = dict(zip(outcome.agents, outcome.credibility))
            weights = [cred.get(p, 0.0) for p in producers]
        elif ac.fusion == "weighted":
            gw = gate.as_dict()
            weights = [gw.get(p, 0.0) for p in producers]
        if weights is not None and sum(weights) > 0:
            fused = weighted_fuse(lists, weights, ac.k0)
        else:
            fused = rrf_fuse(lists, ac.k0)
        intents = query.intents()
        if ac.diversify and len(intents) > 1 and self.index is not None:
            pool = fused.doc_ids[: ac.pool_factor * ac.answer_k]
            head = diversify_err_ia(pool, intents, self._grades(pool), ac.answer_k, self.cfg.retrieval.g_max)
            chosen = set(head.doc_ids)
            score_of = {d.doc_id: d.score for d in fused}
            ordered = head.doc_ids + [d for d in fused.doc_ids if d not in chosen]
            n = len(ordered)
            fused = RankedList(
                tuple(ScoredDoc(d, score_of[d] if d not in chosen else 1.0 + (n - i) / n) for i, d in enumerate(ordered)),
                "fused",
            )
        return fused

    # -- main loop ---------------------------------------------------------

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def _static_choice(self, query, ctx, gate, budget, novelty_value):
        mode = self.cfg.coordinator.routing
        k = min(self.k_from_budget(budget), len(gate.persona_ids))
        if mode == "uniform":
            picked = sorted(self._rng.choice(len(gate.persona_ids), size=k, replace=False).tolist())
            agents = [gate.persona_ids[i] for i in picked]
            propensity = 1.0 / math.comb(len(gate.persona_ids), k)
        else:
            agents = self.top_k_personas(gate, k)
            w = gate.as_dict()
            propensity = sum(w[p] for p in agents) / len(agents)
        proto = self.select_protocol(query, ctx, gate, novelty_value)
        return agents, proto, propensity

    def handle_query(self, query: Query, ctx: SessionContext, budget: int | None = None) -> TurnResult:
        """Gate, pick personas and protocol, run it, fuse, synthesize and log."""
        with self._session_lock(ctx.session_id):
            start = time.perf_counter()
            cc, lc = self.cfg.coordinator, self.cfg.learning
            budget = budget or cc.budget
            self.memory.tick()
            features = self.encoder.encode(query, ctx)
            gate = self.predict_gate(query, ctx, features)
            nov = self._novelty(query, ctx)
            if self.router is not None:
                arm_id, propensity = self.router.select(features.vector)
                arm = Arm.parse(arm_id)
                agents, selected = list(arm.personas), arm.protocol
            else:
                agents, selected, propensity = self._static_choice(query, ctx, gate, budget, nov)
            propensity = max(propensity, lc.epsilon_floor) if self.router is None else propensity
            confidence = self.gate_confidence(gate)
            executed = selected
            vetoed = selected == DEBATE and (confidence < cc.theta or not cc.allow_debate)
            if vetoed:
                executed = INDEPENDENT
            if executed in (RELAY, DEBATE) and len(agents) < 2:
                executed = INDEPENDENT
            intents = query.intents()
            top_intent = max(sorted(intents), key=lambda t: intents[t]) if intents else None
            task_state = {"protocol": executed, "intent": top_intent}
            if executed == INDEPENDENT:
                outcome = self.run_independent(query, ctx, agents, task_state)
            elif executed == RELAY:
                outcome = self.run_relay(query, ctx, agents, task_state)
            else:
                outcome = self.run_debate(query, ctx, agents, cc.r_max, task_state)
            if not outcome.steps:
                raise AgentStepError(",".join(outcome.failed), "all agents failed")
            for step in outcome.steps:
                self.memory.write_memory(step.update)
            fused = self.fuse(query, outcome, gate)
            ac = self.cfg.arbiter
            answer = synthesize(query, outcome.notes, fused, self.backend, ac.answer_k, ac.hedge_threshold)
            tokens = outcome.tokens_total + answer.tokens_used
            latency = (outcome.critical_calls + 1) * self.cfg.agent.call_delay_ms
            arm_id = Arm(tuple(agents), selected).id
            log = {
                "session_id": ctx.session_id,
                "turn": ctx.turn_index,
                "query": query.text,
                "features_digest": features.digest(),
                "features": [float(v) for v in features.vector],
                "personas": list(agents),
                "selected_protocol": selected,
                "protocol": executed,
                "fallback": vetoed,
                "arm": arm_id,
                "propensity": float(propensity),
                "confidence": confidence,
                "gate": gate.as_dict(),
                "novelty": nov,
                "rounds": outcome.rounds_executed,
                "failed": list(outcome.failed),
                "tokens": int(tokens),
                "context_sizes": outcome.context_sizes,
                "reward": None,
                "reward_components": {},
                "latency_ms": latency,
            }
            wall = (time.perf_counter() - start) * 1000.0
            return TurnResult(answer, fused, log, outcome, features, wall)

    def feedback(self, turn: TurnResult, reward: float, components: Mapping[str, float] | None = None) -> None:
        """Resolve the delayed reward for a turn and update the router."""
        turn.log["reward"] = float(reward)
        turn.log["reward_components"] = dict(components or {})
        if self.router is not None:
            self.router.partial_fit(turn.features.vector, turn.log["arm"], float(reward))
