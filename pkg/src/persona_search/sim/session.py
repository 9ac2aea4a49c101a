"""Session loop and the end-to-end simulation runner behind ``simulate``."""
from __future__ import annotations

import csv
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ..agent import AgentBackend
from ..arbiter import citation_coverage
from ..config import Config
from ..context import Query, SessionContext
from ..exceptions import AgentStepError
from ..learning import compose_reward
from ..metrics import Judgment, err_ia_at_k, ndcg_at_k
from ..retrieval import Document, load_corpus, write_corpus
from ..system import System, build_system
from .clicks import cascade_click
from .corpus import SyntheticCorpus, generate_corpus
from .users import SyntheticUser, generate_users

METRIC_K = 5


def derive_seed(seed: int, *path: int) -> int:
    """Independent child seed for a (seed, path...) position."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def make_query(
    user: SyntheticUser,
    corpus: SyntheticCorpus,
    rng: np.random.Generator,
    qid: str,
    turn: int,
) -> tuple[Query, str]:
    """Template query for an intent drawn from the user's profile.

    Returns the query and the intent it was drawn for. The attached intent
    distribution is what a query-side classifier could see: every intent of
    the family, with extra mass on intents whose words appear in the text.
    """
    ids = [i for i, _ in user.intent_profile]
    probs = np.array([p for _, p in user.intent_profile])
    intent_id = ids[int(rng.choice(len(ids), p=probs / probs.sum()))]
    intent = corpus.intents[intent_id]
    family = corpus.families[intent.family]
    words = list(rng.choice(family.words, size=2, replace=False))
    words.append(str(rng.choice(intent.words)))
    if rng.random() < 0.3:
        words.append(str(rng.choice(corpus.noise)))
    text = " ".join(words)
    present = set(words)
    weights = {i.id: 1.0 + (2.0 if present & set(i.words) else 0.0) for i in family.intents}
    total = sum(weights.values())
    dist = tuple((i, w / total) for i, w in sorted(weights.items()))
    return Query(qid, text, turn, dist), intent_id


@dataclass
class SessionLog:
    session_id: str
    user_id: str
    turns: list[dict[str, Any]] = field(default_factory=list)
    success: bool = False
    failed_turns: int = 0

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "user_id": self.user_id,
            "success": self.success,
            "n_turns": self.n_turns,
            "failed_turns": self.failed_turns,
            "turns": self.turns,
        }


RewardFn = Callable[[dict[str, Any], SyntheticUser], Optional[float]]


def simulate_session(
    user: SyntheticUser,
    system: System,
    corpus: SyntheticCorpus,
    max_turns: int,
    seed: int,
    session_id: str,
    decisions: Optional[list[dict]] = None,
    reward_fn: Optional[RewardFn] = None,
) -> SessionLog:
    """Run one user session until success or ``max_turns``.

    ``reward_fn`` can replace the composed click reward (used by the drift
    experiments); it receives the coordinator's turn log and the user.
    """
    cfg = system.cfg
    rng = np.random.default_rng(seed)
    coord, memory = system.coordinator, system.memory
    grades = {d.doc_id: d.intent_grades for d in corpus.documents}
    target, min_grade = user.success_condition
    judgment = Judgment(grades, dict(user.intent_profile))
    shown_k = cfg.arbiter.answer_k
    log = SessionLog(session_id, user.user_id)
    ctx = SessionContext(session_id, user.user_id)
    for t in range(max_turns):
        query, intent = make_query(user, corpus, rng, f"{session_id}.q{t}", t)
        try:
            result = coord.handle_query(query, ctx)
        except AgentStepError as exc:
            log.failed_turns += 1
            log.turns.append({"turn": t, "query": query.text, "intent": intent, "failed": True, "error": str(exc)})
            ctx = ctx.advance(query)
            continue
        shown = result.fused.doc_ids[:shown_k]
        outcome = cascade_click(shown, user, rng, grades, cfg.retrieval.g_max) if shown else None
        clicks = outcome.clicks if outcome else ()
        success = any(grades.get(c.doc_id, {}).get(target, 0) >= min_grade for c in clicks)
        dwell = outcome.dwell if outcome else 0.0
        lc = cfg.learning
        tokens = result.log["tokens"]
        components = {
            "clicked": float(bool(clicks)),
            "dwell": float(dwell),
            "success": float(success),
            "tokens": float(tokens),
        }
        reward = compose_reward(bool(clicks), dwell, success, tokens, lc.reward_weights, lc.dwell_cap, lc.token_cap)
        if reward_fn is not None:
            override = reward_fn(result.log, user)
            if override is not None:
                reward = float(override)
        coord.feedback(result, reward, components)
        clicked = [c.doc_id for c in clicks]
        patterns = [f"domain:{dom}" for dom in sorted({system.index.docs[d].domain for d in clicked})]
        memory.record_feedback(session_id, ctx.turn_index, clicked, patterns)
        rec = {
            "turn": t,
            "query": query.text,
            "intent": intent,
            "protocol": result.log["protocol"],
            "selected_protocol": result.log["selected_protocol"],
            "fallback": result.log["fallback"],
            "personas": result.log["personas"],
            "arm": result.log["arm"],
            "shown": shown,
            "clicks": [{"doc_id": c.doc_id, "rank": c.rank, "dwell": c.dwell} for c in clicks],
            "dwell": dwell,
            "reward": reward,
            "tokens": tokens,
            "latency_ms": result.log["latency_ms"],
            "rounds": result.log["rounds"],
            "confidence": result.log["confidence"],
            "context_sizes": result.log["context_sizes"],
            "failed": bool(result.log["failed"]),
            "success": success,
            "ndcg": ndcg_at_k(shown, judgment.for_intent(user.dominant_intent), METRIC_K),
            "err_ia": err_ia_at_k(shown, judgment, METRIC_K, cfg.retrieval.g_max),
            "citation_coverage": citation_coverage(result.answer),
            "answer": result.answer.to_dict(),
        }
        log.turns.append(rec)
        if decisions is not None:
            decisions.append(
                {
                    "session_id": session_id,
                    "turn": t,
                    "features": result.log["features"],
                    "arm": result.log["arm"],
                    "propensity": result.log["propensity"],
                    "reward": reward,
                    "reward_components": components,
                    "tokens": tokens,
                }
            )
        ctx = ctx.advance(query, clicks)
        if success:
            log.success = True
            break
    memory.end_session(session_id)
    memory.decay_and_purge()
    memory.promote()
    return log


@dataclass
class SimulationResult:
    sessions: list[SessionLog]
    decisions: list[dict]
    report: dict[str, Any]
    system: System
    corpus: SyntheticCorpus
    users: list[SyntheticUser]


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def summarize(sessions: Sequence[SessionLog]) -> dict[str, Any]:
    """Aggregate per-turn and per-session statistics from session logs."""
    turns = [t for s in sessions for t in s.turns if not t.get("failed")]
    tokens = sum(t["tokens"] for t in turns)
    protocols: dict[str, int] = {}
    for t in turns:
        protocols[t["protocol"]] = protocols.get(t["protocol"], 0) + 1
    success_turns = [s.n_turns for s in sessions if s.success]
    return {
        "n_sessions": len(sessions),
        "n_turns": sum(s.n_turns for s in sessions),
        "failed_turns": sum(s.failed_turns for s in sessions),
        "success_rate": _mean([float(s.success) for s in sessions]),
        "mean_turns": _mean([s.n_turns for s in sessions]),
        "mean_turns_to_success": _mean(success_turns),
        "mean_reward": _mean([t["reward"] for t in turns]),
        "mean_session_reward": _mean([sum(t["reward"] for t in s.turns if not t.get("failed")) for s in sessions]),
        "mean_tokens_per_turn": _mean([t["tokens"] for t in turns]),
        "mean_tokens_per_session": _mean([sum(t.get("tokens", 0) for t in s.turns) for s in sessions]),
        "utility_per_token": (sum(t["reward"] for t in turns) / tokens) if tokens > 0 else 0.0,
        "mean_latency_ms": _mean([t["latency_ms"] for t in turns]),
        f"ndcg@{METRIC_K}": _mean([t["ndcg"] for t in turns]),
        f"err_ia@{METRIC_K}": _mean([t["err_ia"] for t in turns]),
        "citation_coverage": _mean([t["citation_coverage"] for t in turns]),
        "max_context_size": max((max(t["context_sizes"], default=0) for t in turns), default=0),
        "fallback_rate": _mean([float(t["fallback"]) for t in turns]),
        "protocol_counts": dict(sorted(protocols.items())),
    }


def load_or_generate_corpus(cfg: Config, seed: int) -> SyntheticCorpus:
    sc = cfg.sim
    synthetic = generate_corpus(cfg.personas.domains, sc.n_docs, sc.n_families, sc.intents_per_family, seed)
    if sc.corpus_path:
        # user corpus: keep the synthetic query families so users can still be drawn
        docs = load_corpus(sc.corpus_path, cfg.retrieval.g_max)
        return SyntheticCorpus(docs, synthetic.families, synthetic.noise)
    return synthetic


def run_simulation(
    cfg: Config,
    seed: int,
    out_dir: str | Path | None = None,
    backend: AgentBackend | None = None,
    corpus: SyntheticCorpus | None = None,
    reward_fn: Optional[RewardFn] = None,
) -> SimulationResult:
    """Generate corpus and users, run every session in a fixed order, persist outputs.

    Sessions run sequentially (session-major, then user order) so that the
    shared bandit and memory evolve identically on every run.
    """
    cfg = cfg.replace(coordinator={"seed": derive_seed(seed, 0)})
    corpus = corpus or load_or_generate_corpus(cfg, derive_seed(seed, 1))
    users = generate_users(cfg.sim.users, derive_seed(seed, 2), list(corpus.intents.values()), cfg.sim.success_min_grade)
    journal = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        journal = out / "memory"
        if journal.exists():
            shutil.rmtree(journal)
    system = build_system(cfg, corpus.documents, backend=backend, journal_dir=journal)
    sessions: list[SessionLog] = []
    decisions: list[dict] = []
    for s in range(cfg.sim.n_sessions):
        for ui, user in enumerate(users):
            sid = f"s{s:03d}-{user.user_id}"
            sessions.append(
                simulate_session(
                    user, system, corpus, cfg.sim.max_turns, derive_seed(seed, 3, s, ui), sid, decisions, reward_fn
                )
            )
    report = {"seed": seed, "routing": cfg.coordinator.routing, **summarize(sessions)}
    report["memory"] = {
        "records": {store: len(system.memory.records(store)) for store in ("working", "episodic", "semantic")},
        "mutations": system.memory.mutation_count(),
    }
    result = SimulationResult(sessions, decisions, report, system, corpus, users)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_csv(path: Path, rows: Sequence[dict[str, Any]]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0])
    for row in rows[1:]:
        cols += [c for c in row if c not in cols]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _cell(row.get(c)) for c in cols})


def _cell(v):
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return v


def write_outputs(result: SimulationResult, out: Path) -> None:
    _write_jsonl(out / "sessions.jsonl", (s.to_dict() for s in result.sessions))
    _write_jsonl(out / "decisions.jsonl", result.decisions)
    _write_jsonl(out / "users.jsonl", (u.to_dict() for u in result.users))
    write_corpus(result.corpus.documents, out / "corpus.jsonl")
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n")
    write_csv(
        out / "summary.csv",
        [
            {
                "session_id": s.session_id,
                "user_id": s.user_id,
                "success": int(s.success),
                "n_turns": s.n_turns,
                "reward": sum(t.get("reward", 0.0) for t in s.turns),
                "tokens": sum(t.get("tokens", 0) for t in s.turns),
            }
            for s in result.sessions
        ],
    )


def read_sessions(log_dir: str | Path) -> list[SessionLog]:
    out = []
    with open(Path(log_dir) / "sessions.jsonl") as fh:
        for line in fh:
            row = json.loads(line)
            out.append(SessionLog(row["session_id"], row["user_id"], row["turns"], row["success"], row["failed_turns"]))
    return out


def read_documents(log_dir: str | Path) -> list[Document]:
    return load_corpus(Path(log_dir) / "corpus.jsonl")
