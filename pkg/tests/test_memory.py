import json

import pytest

from persona_search.context import Query, SessionContext
from persona_search.exceptions import MemoryUpdateError
from persona_search.memory import (
    EPISODIC,
    SEMANTIC,
    WORKING,
    MemoryRecord,
    MemorySystem,
    PromotionPolicy,
    RegexRedactor,
    redact,
    retrieve_from,
)

from conftest import make_update


def ctx(session="s1", user="u1"):
    return SessionContext(session, user)


def test_fresh_user_views_empty(memory):
    snap = memory.read_memory(Query("q", "rust"), ctx())
    assert snap.working == snap.episodic == snap.semantic == ()


def test_working_view_capped_to_newest(memory):
    for t in range(100):
        memory.tick()
        memory.write_memory(make_update(turn=t, query=f"query {t}"))
    snap = memory.read_memory(Query("q", "x"), ctx())
    assert len(snap.working) == 8
    turns = [r.payload["turn"] for r in snap.working]
    assert turns == list(range(99, 91, -1))


def test_users_do_not_leak(memory):
    for t in range(5):
        memory.tick()
        memory.write_memory(make_update(user="u1", session="a", turn=t))
        memory.write_memory(make_update(user="u2", session="b", turn=t))
    s1 = memory.read_memory(Query("q", "rust"), ctx("a", "u1"))
    s2 = memory.read_memory(Query("q", "rust"), ctx("b", "u2"))
    assert s1.record_ids and s2.record_ids
    assert not s1.record_ids & s2.record_ids
    assert all(r.user_id == "u1" for r in s1.working + s1.episodic)


def _rec(rid, text, weight=1.0):
    return MemoryRecord(rid, EPISODIC, "u", "s", {"text": text}, 0, 0, weight, {"origin": "t"}, 1, ("s",))


def test_retrieve_from_examples():
    assert retrieve_from([], [], Query("q", "a b"), 3) == []
    full = _rec("e1", "a b c")
    [(rec, score)] = retrieve_from([full], [], Query("q", "a b"), 3)
    assert rec is full and score == 1.0
    recs = [_rec("e1", "a b"), _rec("e2", "a z"), _rec("e3", "z y")]
    top = retrieve_from(recs, [], Query("q", "a b"), 2)
    assert [r.record_id for r, _ in top] == ["e1", "e2"]
    assert [s for _, s in top] == [1.0, 0.5]


def test_one_step_writes_one_working_one_episodic(memory):
    ids = memory.write_memory(make_update())
    assert len(ids) == 2
    assert len(memory.records(WORKING)) == 1
    assert len(memory.records(EPISODIC)) == 1
    assert memory.records(SEMANTIC) == []


def test_missing_provenance_rejected(memory):
    upd = make_update()
    upd.provenance = None
    with pytest.raises(MemoryUpdateError):
        memory.write_memory(upd)
    assert memory.all_records() == []


def test_episodic_ordered_by_time(memory):
    memory.tick()
    memory.write_memory(make_update(turn=0, query="first"))
    memory.tick()
    memory.write_memory(make_update(turn=1, query="second"))
    eps = memory.read_memory(Query("q", "x"), ctx()).episodic
    assert [r.payload["query"] for r in eps] == ["first", "second"]
    assert eps[0].created_at < eps[1].created_at


def _seen(memory, session, turn, pattern="domain:software"):
    memory.tick()
    memory.write_memory(make_update(session=session, turn=turn))
    memory.record_feedback(session, turn, ["d1"], [pattern])


def test_no_promotion_below_thresholds(memory):
    _seen(memory, "s1", 0)
    _seen(memory, "s1", 1)
    assert memory.promote(PromotionPolicy(n_min=3, s_min=2)) == []
    _seen(memory, "s1", 2)  # 3 interactions but one session
    assert memory.promote(PromotionPolicy(n_min=3, s_min=2)) == []


def test_promotion_across_sessions(memory):
    _seen(memory, "s1", 0)
    _seen(memory, "s1", 1)
    _seen(memory, "s2", 0)
    [rec] = memory.promote(PromotionPolicy(n_min=3, s_min=2))
    assert rec.store == SEMANTIC
    assert rec.support_count == 3
    assert set(rec.support_sessions) == {"s1", "s2"}
    before = [r.to_dict() for r in memory.records(SEMANTIC)]
    assert memory.promote() == []
    assert [r.to_dict() for r in memory.records(SEMANTIC)] == before


def test_half_life_exact():
    mem = MemorySystem(half_life=20)
    mem.write_memory(make_update())
    mem.decay_and_purge(now=20)
    [rec] = mem.records(EPISODIC)
    assert rec.weight == 0.5


def test_retention_purge_audited():
    mem = MemorySystem(half_life=1e9, retention_limit=10)
    mem.write_memory(make_update())
    assert mem.decay_and_purge(now=11) == 1
    assert mem.records(EPISODIC) == []
    assert mem.audit_log[-1].action == "purge"


def test_semantic_untouched_by_decay(memory):
    _seen(memory, "s1", 0)
    _seen(memory, "s1", 1)
    _seen(memory, "s2", 0)
    [sem] = memory.promote()
    memory.decay_and_purge(now=10_000)
    assert memory.records(SEMANTIC) == [sem]


def test_forget(memory):
    _seen(memory, "s1", 0)
    _seen(memory, "s1", 1)
    _seen(memory, "s2", 0)
    memory.promote()
    memory.write_memory(make_update(user="u2", session="x"))
    assert memory.forget(user_id="nobody") == 0
    removed = memory.forget(user_id="u1")
    assert removed > 0
    assert all(r.user_id == "u2" for r in memory.all_records())
    hits = retrieve_from(memory.records(EPISODIC), memory.records(SEMANTIC), Query("q", "rust parsers"), 10)
    assert all(r.user_id == "u2" for r, _ in hits)


def test_redaction_before_storage(tmp_path):
    assert redact({"a": "x@y.z"}) == {"a": "x@y.z"}
    mem = MemorySystem(redactor=RegexRedactor(), journal_dir=tmp_path)
    mem.write_memory(make_update(query="mail me at a@b.c"))
    [rec] = mem.records(EPISODIC)
    assert rec.payload["query"] == "mail me at [REDACTED]"
    assert "a@b.c" not in (tmp_path / "episodic.jsonl").read_text()


def test_every_mutation_audited(memory):
    n0 = len(memory.audit_log)
    memory.write_memory(make_update())
    memory.record_feedback("s1", 0, ["d1"], ["domain:x"])
    memory.promote()
    memory.decay_and_purge(now=5)
    memory.forget(session_id="s1")
    memory.end_session("s1")
    actions = [a.action for a in memory.audit_log[n0:]]
    assert actions == ["write", "write", "promote", "purge", "forget", "purge"]


def test_journal_replay_round_trip(tmp_path):
    mem = MemorySystem(journal_dir=tmp_path)
    _seen(mem, "s1", 0)
    _seen(mem, "s1", 1)
    _seen(mem, "s2", 0)
    mem.promote()
    mem.forget(session_id="s2")
    again = MemorySystem.replay(tmp_path)
    assert [r.to_dict() for r in again.all_records()] == [r.to_dict() for r in mem.all_records()]
    assert [a.to_dict() for a in again.audit_log] == [a.to_dict() for a in mem.audit_log]
    for line in (tmp_path / "audit.jsonl").read_text().splitlines():
        json.loads(line)


def test_context_bound():
    mem = MemorySystem(w_cap=8, record_token_cap=48)
    assert mem.context_bound(5) == 13 * 48
