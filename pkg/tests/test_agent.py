import pytest

from persona_search.agent import Evidence, MockBackend, Note, Plan, PoolDoc, critique, rank
from persona_search.context import Query, SessionContext
from persona_search.exceptions import AgentStepError
from persona_search.personas import Persona
from persona_search.retrieval import MEMORY, WEB, ScoredDoc
from persona_search.system import build_system

from conftest import TOY_DOCS

CRITIC = Persona("c", "critic", "general", "decision", "finance")
SYNTH = Persona("s", "synthesizer", "health", "exploratory", "medicine")
LIB = Persona("l", "librarian", "programming", "lookup", "software")


def test_plan_actions_by_role():
    be, q, ctx = MockBackend(), Query("q", "rust parsers"), SessionContext("s")
    assert be.plan(q, LIB, ctx, 4000)[0].actions == ["retrieve", "recall"]
    assert be.plan(q, CRITIC, ctx, 4000)[0].actions == ["retrieve", "recall", "compare"]
    assert be.plan(q, SYNTH, ctx, 4000)[0].actions == ["retrieve", "recall", "summarize"]
    plan, _ = be.plan(q, LIB, ctx, 50)
    assert plan.budget_tokens == 50


def test_plan_validation():
    with pytest.raises(ValueError):
        Plan((), 10)
    with pytest.raises(ValueError):
        Plan((("retrieve", "x"),), 0)
    with pytest.raises(ValueError):
        Plan((("browse", "x"),), 10)


def test_note_and_evidence_validation():
    with pytest.raises(ValueError):
        Note("x", (), 0.5)
    with pytest.raises(ValueError):
        Note("x", ("a",), 1.5)
    ev = Evidence((Note("x", ("a",), 0.5),), 3)
    ev.validate({"a", "b"})
    with pytest.raises(ValueError):
        ev.validate({"b"})
    assert Evidence((), 0).no_evidence


def test_reason_confidence_is_score_share():
    pool = [PoolDoc("a", 2.0, WEB, "alpha text"), PoolDoc("b", 1.0, WEB, "beta text")]
    plan = Plan((("retrieve", "q"),), 100)
    notes, tokens = MockBackend().reason(plan, pool, [])
    assert [(n.doc_ids, n.confidence) for n in notes] == [(("a",), 1.0), (("b",), 0.5)]
    assert tokens > 0
    assert MockBackend().reason(plan, [], [])[0] == []


def test_critique_halves_weakly_supported():
    notes = [Note("x", ("a",), 0.8), Note("y", ("b",), 0.8)]
    peers = [Note("p", ("a",), 1.0)]
    out = critique(notes, peers)
    assert [n.confidence for n in out] == [0.8, 0.4]
    assert critique(notes, []) == notes


def test_rank_examples():
    out = rank([ScoredDoc("a", 0.5)], [ScoredDoc("a", 0.4, MEMORY)], "p", 1.2)
    assert [(d.doc_id, d.score, d.source) for d in out] == [("a", 0.5, WEB)]
    out = rank([ScoredDoc("a", 0.5)], [ScoredDoc("a", 0.5, MEMORY)], "p", 1.2)
    assert out.docs[0].score == pytest.approx(0.6) and out.docs[0].source == MEMORY
    out = rank([ScoredDoc("a", 1.0), ScoredDoc("b", 0.1)], [ScoredDoc("c", 0.5, MEMORY)], "p", 1.2)
    assert out.doc_ids == ["a", "c", "b"]


def test_agent_step_writes_and_cites_pool(cfg):
    system = build_system(cfg, TOY_DOCS)
    persona = system.registry.get(system.registry.lookup("librarian", "programming", "lookup", "software"))
    ctx = SessionContext("s1", "u1")
    ranking, evidence = system.agent.agent_step(Query("q1", "rust parser"), ctx, persona)
    assert ranking.doc_ids[0] in {"d1", "d2"}
    assert evidence.cited() <= set(ranking.doc_ids)
    assert system.memory.mutation_count() == 1
    assert system.memory.records("working")[0].provenance["agent_id"] == persona.id


def test_agent_step_failure_is_atomic(cfg):
    system = build_system(cfg, TOY_DOCS, backend=MockBackend(fail_for=["p02"]))
    persona = system.registry.get("p02")
    with pytest.raises(AgentStepError) as err:
        system.agent.agent_step(Query("q1", "rust parser"), SessionContext("s1", "u1"), persona)
    assert err.value.persona_id == "p02"
    assert system.memory.mutation_count() == 0
    assert system.memory.all_records() == []


def test_agent_step_is_deterministic(cfg):
    outs = []
    for _ in range(2):
        system = build_system(cfg, TOY_DOCS)
        persona = system.registry.get("p00")
        r, e = system.agent.agent_step(Query("q1", "language model serving"), SessionContext("s1", "u1"), persona)
        outs.append((r.doc_ids, [d.score for d in r], e.to_dict()))
    assert outs[0] == outs[1]
