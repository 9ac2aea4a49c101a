"""Working, episodic and semantic memory with decay, promotion and an audit log.

Time is logical: ``MemorySystem.clock`` counts interactions and is advanced
by the caller. Each mutating call appends exactly one ``AuditEntry``.
When a journal directory is configured every record change is also appended
to ``<store>.jsonl`` (tombstones for removals) so state can be replayed.
"""
from __future__ import annotations

import json
import re
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from ._text import overlap_fraction, tokenize
from .exceptions import MemoryUpdateError

WORKING = "working"
EPISODIC = "episodic"
SEMANTIC = "semantic"
STORES = (WORKING, EPISODIC, SEMANTIC)

EMAIL_PATTERN = r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+"


@dataclass(frozen=True)
class MemoryRecord:
    record_id: str
    store: str
    user_id: str
    session_id: str
    payload: Mapping[str, Any]
    created_at: int
    last_access: int
    weight: float
    provenance: Mapping[str, Any]
    support_count: int = 1
    support_sessions: tuple[str, ...] = ()
    decayed_at: int = 0

    def __post_init__(self):
        if self.store not in STORES:
            raise ValueError(f"unknown store {self.store!r}")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.support_count < 1 or not self.support_sessions:
            raise ValueError("support_count >= 1 and non-empty support_sessions required")

    @property
    def text(self) -> str:
        return str(self.payload.get("text", ""))

    @property
    def size(self) -> int:
        """Token length of the record as it would enter an agent's context."""
        return len(tokenize(self.text))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["support_sessions"] = list(self.support_sessions)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MemoryRecord":
        d = dict(d)
        d["support_sessions"] = tuple(d.get("support_sessions", ()))
        return cls(**d)


@dataclass(frozen=True)
class AuditEntry:
    timestamp: int
    actor: str
    action: str  # read | write | promote | purge | forget
    record_ids: tuple[str, ...]
    reason: str

    def to_dict(self) -> dict:
        return {**asdict(self), "record_ids": list(self.record_ids)}


@dataclass(frozen=True)
class MemorySnapshot:
    """Immutable view handed to an agent step."""

    working: tuple[MemoryRecord, ...]
    episodic: tuple[MemoryRecord, ...]
    semantic: tuple[MemoryRecord, ...]

    def episodic_queries(self) -> list[str]:
        return [str(r.payload.get("query", "")) for r in self.episodic]

    @property
    def record_ids(self) -> set[str]:
        return {r.record_id for r in self.working + self.episodic + self.semantic}


@dataclass
class MemoryUpdate:
    """What one agent step wants to remember."""

    user_id: str
    session_id: str
    query: str
    turn: int
    shown: Sequence[str]
    notes: Sequence[str]
    trace: str
    task_state: Mapping[str, Any] = field(default_factory=dict)
    provenance: Optional[Mapping[str, Any]] = None
    accessed: Sequence[str] = ()


@dataclass(frozen=True)
class PromotionPolicy:
    n_min: int = 3
    s_min: int = 2


class RegexRedactor:
    """Replaces every match of the given patterns with ``[REDACTED]``."""

    def __init__(self, patterns: Sequence[str] = (EMAIL_PATTERN,), marker: str = "[REDACTED]"):
        self.patterns = [re.compile(p) for p in patterns]
        self.marker = marker

    def __call__(self, text: str) -> str:
        for pat in self.patterns:
            text = pat.sub(self.marker, text)
        return text


def identity_redactor(text: str) -> str:
    return text


def redact(payload: Any, redactor: Callable[[str], str] = identity_redactor) -> Any:
    """Apply ``redactor`` to every string inside a (nested) payload."""
    if isinstance(payload, str):
        return redactor(payload)
    if isinstance(payload, Mapping):
        return {k: redact(v, redactor) for k, v in payload.items()}
    if isinstance(payload, (list, tuple)):
        return type(payload)(redact(v, redactor) for v in payload)
    return payload


def retrieve_from(
    episodic: Iterable[MemoryRecord],
    semantic: Iterable[MemoryRecord],
    query,
    limit: int,
) -> list[tuple[MemoryRecord, float]]:
    """Score records by (query-token overlap x weight) and return the top ``limit``."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    q_tokens = set(query.tokens if hasattr(query, "tokens") else tokenize(str(query)))
    scored = []
    for rec in list(episodic) + list(semantic):
        score = overlap_fraction(q_tokens, set(tokenize(rec.text))) * rec.weight
        if score > 0:
            scored.append((rec, score))
    scored.sort(key=lambda rs: (-rs[1], rs[0].record_id))
    return scored[:limit]


def _truncate(text: str, cap: int) -> str:
    return " ".join(tokenize(text)[:cap])


class MemoryJournal:
    """Append-only JSONL journal, one file per store plus ``audit.jsonl``."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _append(self, name: str, row: Mapping[str, Any]) -> None:
        with open(self.dir / f"{name}.jsonl", "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    def upsert(self, rec: MemoryRecord) -> None:
        self._append(rec.store, rec.to_dict())

    def delete(self, rec: MemoryRecord) -> None:
        self._append(rec.store, {"record_id": rec.record_id, "deleted": True})

    def audit(self, entry: AuditEntry) -> None:
        self._append("audit", entry.to_dict())


class MemorySystem:
    """Tripartite memory keyed by user (long-term) and session (working).

    Args:
        w_cap: working-view cap per session.
        half_life: episodic decay half-life in interactions.
        eps_purge: episodic records lighter than this are purged.
        retention_limit: episodic records older than this are purged.
        policy: promotion thresholds.
        redactor: string filter applied to payloads before storage.
        record_token_cap: max tokens kept in a record's context text.
        separation: when False the working view is the whole session history
            (no cap), used to contrast context growth.
        episodic: when False long-term views are always empty (ablation).
        journal_dir: optional directory for the JSONL journal.
    """

    def __init__(
        self,
        w_cap: int = 8,
        half_life: float = 20.0,
        eps_purge: float = 0.05,
        retention_limit: int = 500,
        policy: PromotionPolicy = PromotionPolicy(),
        redactor: Callable[[str], str] = identity_redactor,
        record_token_cap: int = 48,
        separation: bool = True,
        episodic: bool = True,
        journal_dir: str | Path | None = None,
    ):
        self.w_cap = w_cap
        self.half_life = half_life
        self.eps_purge = eps_purge
        self.retention_limit = retention_limit
        self.policy = policy
        self.redactor = redactor
        self.record_token_cap = record_token_cap
        self.separation = separation
        self.episodic = episodic
        self.journal = MemoryJournal(journal_dir) if journal_dir else None
        self.clock = 0
        self._stores: dict[str, dict[str, MemoryRecord]] = {s: {} for s in STORES}
        self.audit_log: list[AuditEntry] = []
        self._next_id = 0
        self._lock = threading.RLock()

    @classmethod
    def from_config(cls, cfg, journal_dir: str | Path | None = None) -> "MemorySystem":
        redactor = RegexRedactor(cfg.redact_patterns) if cfg.redact_patterns else identity_redactor
        return cls(
            w_cap=cfg.w_cap,
            half_life=cfg.half_life,
            eps_purge=cfg.eps_purge,
            retention_limit=cfg.retention_limit,
            policy=PromotionPolicy(cfg.n_min, cfg.s_min),
            redactor=redactor,
            record_token_cap=cfg.record_token_cap,
            separation=cfg.separation,
            episodic=cfg.episodic,
            journal_dir=journal_dir or cfg.journal_dir,
        )

    # -- internals ---------------------------------------------------------

    def _new_id(self, store: str) -> str:
        self._next_id += 1
        return f"{store[0]}{self._next_id:07d}"

    def _put(self, rec: MemoryRecord) -> None:
        self._stores[rec.store][rec.record_id] = rec
        if self.journal:
            self.journal.upsert(rec)

    def _drop(self, rec: MemoryRecord) -> None:
        del self._stores[rec.store][rec.record_id]
        if self.journal:
            self.journal.delete(rec)

    def _audit(self, actor: str, action: str, ids: Iterable[str], reason: str) -> None:
        entry = AuditEntry(self.clock, actor, action, tuple(ids), reason)
        self.audit_log.append(entry)
        if self.journal:
            self.journal.audit(entry)

    def records(self, store: str) -> list[MemoryRecord]:
        return list(self._stores[store].values())

    def all_records(self) -> list[MemoryRecord]:
        return [r for s in STORES for r in self._stores[s].values()]

    def mutation_count(self) -> int:
        return sum(1 for e in self.audit_log if e.action != "read")

    def context_bound(self, recall_limit: int) -> int:
        """Largest agent input (tokens) a capped read plus ``recall_limit`` recalls can produce."""
        return (self.w_cap + recall_limit) * self.record_token_cap

    def tick(self, n: int = 1) -> int:
        self.clock += n
        return self.clock

    # -- operations --------------------------------------------------------

    def read_memory(self, query, ctx, actor: str = "system") -> MemorySnapshot:
        """Snapshot of the session's working view and the user's long-term stores."""
        with self._lock:
            owner = ctx.owner
            working = sorted(
                (r for r in self._stores[WORKING].values() if r.session_id == ctx.session_id),
                key=lambda r: (r.created_at, r.record_id),
                reverse=True,
            )
            if self.separation:
                working = working[: self.w_cap]
            episodic = sorted(
                (r for r in self._stores[EPISODIC].values() if r.user_id == owner and self.episodic),
                key=lambda r: (r.created_at, r.record_id),
            )
            semantic = sorted(
                (r for r in self._stores[SEMANTIC].values() if r.user_id == owner and self.episodic),
                key=lambda r: r.record_id,
            )
            snap = MemorySnapshot(tuple(working), tuple(episodic), tuple(semantic))
            self._audit(actor, "read", sorted(snap.record_ids), f"read for {ctx.session_id}")
            return snap

    def write_memory(self, update: MemoryUpdate) -> list[str]:
        """Store one working trace and one episodic interaction tuple."""
        if not update.provenance:
            raise MemoryUpdateError("memory update carries no provenance")
        with self._lock:
            now = self.clock
            cap = self.record_token_cap
            prov = dict(update.provenance)
            trace = redact(
                {"kind": "trace", "text": _truncate(update.trace, cap), "turn": update.turn},
                self.redactor,
            )
            interaction = redact(
                {
                    "kind": "interaction",
                    "query": update.query,
                    "turn": update.turn,
                    "shown": list(update.shown),
                    "clicks": [],
                    "notes": list(update.notes),
                    "task_state": dict(update.task_state),
                    "patterns": [],
                    "text": _truncate(" ".join([update.query, *update.notes]), cap),
                },
                self.redactor,
            )
            common = dict(
                user_id=update.user_id,
                session_id=update.session_id,
                created_at=now,
                last_access=now,
                weight=1.0,
                provenance=prov,
                support_count=1,
                support_sessions=(update.session_id,),
                decayed_at=now,
            )
            w = MemoryRecord(self._new_id(WORKING), WORKING, payload=trace, **common)
            e = MemoryRecord(self._new_id(EPISODIC), EPISODIC, payload=interaction, **common)
            self._put(w)
            self._put(e)
            touched = []
            for rid in update.accessed:
                for store in (EPISODIC, SEMANTIC):
                    rec = self._stores[store].get(rid)
                    if rec is not None:
                        self._put(replace(rec, last_access=now))
                        touched.append(rid)
            self._audit(str(prov.get("agent_id", "system")), "write", [w.record_id, e.record_id, *touched], "agent step")
            return [w.record_id, e.record_id]

    def record_feedback(
        self, session_id: str, turn: int, clicked: Sequence[str], patterns: Sequence[str]
    ) -> list[str]:
        """Attach observed clicks and the behavioural patterns they reveal."""
        with self._lock:
            touched = []
            for rec in list(self._stores[EPISODIC].values()):
                if rec.session_id == session_id and rec.payload.get("turn") == turn:
                    payload = dict(rec.payload)
                    payload["clicks"] = list(clicked)
                    payload["patterns"] = sorted(set(patterns))
                    self._put(replace(rec, payload=payload, last_access=self.clock))
                    touched.append(rec.record_id)
            self._audit("simulator", "write", touched, f"feedback turn {turn}")
            return touched

    def promote(self, policy: PromotionPolicy | None = None) -> list[MemoryRecord]:
        """Turn repeated episodic patterns into semantic preference assertions.

        Support is counted over distinct interactions ``(session, turn)``, so
        several agents answering the same turn count once.
        """
        policy = policy or self.policy
        with self._lock:
            support: dict[tuple[str, str], dict] = {}
            for rec in sorted(self._stores[EPISODIC].values(), key=lambda r: r.record_id):
                for pattern in rec.payload.get("patterns", ()):
                    slot = support.setdefault(
                        (rec.user_id, pattern), {"keys": set(), "sessions": set(), "queries": [], "docs": []}
                    )
                    slot["keys"].add(f"{rec.session_id}#{rec.payload.get('turn')}")
                    slot["sessions"].add(rec.session_id)
                    q = rec.payload.get("query", "")
                    if q not in slot["queries"]:
                        slot["queries"].append(q)
                    for d in rec.payload.get("clicks", ()):
                        if d not in slot["docs"]:
                            slot["docs"].append(d)
            existing = {
                (r.user_id, r.payload.get("pattern")): r for r in self._stores[SEMANTIC].values()
            }
            created, touched = [], []
            for (user, pattern), slot in sorted(support.items()):
                prev = existing.get((user, pattern))
                keys = set(slot["keys"])
                sessions = set(slot["sessions"])
                if prev is not None:
                    keys |= set(prev.payload.get("support_keys", ()))
                    sessions |= set(prev.support_sessions)
                if len(keys) < policy.n_min or len(sessions) < policy.s_min:
                    continue
                queries = list(prev.payload.get("queries", ())) if prev else []
                queries += [q for q in slot["queries"] if q not in queries]
                docs = list(prev.payload.get("doc_ids", ())) if prev else []
                docs += [d for d in slot["docs"] if d not in docs]
                payload = {
                    "kind": "preference",
                    "pattern": pattern,
                    "support_keys": sorted(keys),
                    "queries": queries,
                    "doc_ids": docs,
                    "text": _truncate(" ".join([pattern.replace(":", " "), *queries]), self.record_token_cap),
                }
                if prev is not None:
                    updated = replace(
                        prev,
                        payload=payload,
                        support_count=len(keys),
                        support_sessions=tuple(sorted(sessions)),
                    )
                    if updated != prev:
                        self._put(updated)
                        touched.append(updated.record_id)
                    continue
                rec = MemoryRecord(
                    self._new_id(SEMANTIC),
                    SEMANTIC,
                    user_id=user,
                    session_id=sorted(sessions)[0],
                    payload=payload,
                    created_at=self.clock,
                    last_access=self.clock,
                    weight=1.0,
                    provenance={"origin": "promote", "agent_id": "system", "session_id": sorted(sessions)[0]},
                    support_count=len(keys),
                    support_sessions=tuple(sorted(sessions)),
                    decayed_at=self.clock,
                )
                self._put(rec)
                created.append(rec)
            self._audit("system", "promote", [r.record_id for r in created] + touched, "promotion pass")
            return created

    def decay_and_purge(self, now: int | None = None) -> int:
        """Decay episodic weights to ``now`` and purge light or expired records."""
        with self._lock:
            now = self.clock if now is None else now
            self.clock = max(self.clock, now)
            purged = []
            for rec in sorted(self._stores[EPISODIC].values(), key=lambda r: r.record_id):
                dt = max(0, now - rec.decayed_at)
                weight = rec.weight * 2.0 ** (-dt / self.half_life)
                if weight < self.eps_purge or now - rec.created_at > self.retention_limit:
                    self._drop(rec)
                    purged.append(rec.record_id)
                elif dt:
                    self._put(replace(rec, weight=weight, decayed_at=now))
            self._audit("system", "purge", purged, "decay and retention")
            return len(purged)

    def forget(
        self,
        predicate: Callable[[MemoryRecord], bool] | None = None,
        *,
        user_id: str | None = None,
        session_id: str | None = None,
        contains: str | None = None,
        actor: str = "user",
    ) -> int:
        """Remove every record (any store) matching all of the given filters."""
        if predicate is None and user_id is None and session_id is None and contains is None:
            raise ValueError("forget needs at least one filter")

        def match(rec: MemoryRecord) -> bool:
            if user_id is not None and rec.user_id != user_id:
                return False
            if session_id is not None and rec.session_id != session_id:
                return False
            if contains is not None and contains not in json.dumps(rec.payload, sort_keys=True):
                return False
            return predicate(rec) if predicate is not None else True

        with self._lock:
            doomed = [r for r in self.all_records() if match(r)]
            for rec in doomed:
                self._drop(rec)
            self._audit(actor, "forget", [r.record_id for r in doomed], "forget request")
            return len(doomed)

    def end_session(self, session_id: str) -> int:
        """Clear the session's working memory."""
        with self._lock:
            doomed = [r for r in self._stores[WORKING].values() if r.session_id == session_id]
            for rec in doomed:
                self._drop(rec)
            self._audit("system", "purge", [r.record_id for r in doomed], "session end")
            return len(doomed)

    # -- persistence -------------------------------------------------------

    @classmethod
    def replay(cls, directory: str | Path, **kwargs) -> "MemorySystem":
        """Rebuild store contents and audit log from a journal directory."""
        system = cls(**kwargs)
        directory = Path(directory)
        max_id = 0
        for store in STORES:
            path = directory / f"{store}.jsonl"
            if not path.exists():
                continue
            with open(path) as fh:
                for line in fh:
                    row = json.loads(line)
                    rid = row["record_id"]
                    max_id = max(max_id, int(rid[1:]))
                    if row.get("deleted"):
                        system._stores[store].pop(rid, None)
                    else:
                        system._stores[store][rid] = MemoryRecord.from_dict(row)
        audit = directory / "audit.jsonl"
        if audit.exists():
            with open(audit) as fh:
                for line in fh:
                    row = json.loads(line)
                    row["record_ids"] = tuple(row["record_ids"])
                    system.audit_log.append(AuditEntry(**row))
        system._next_id = max_id
        system.clock = max([e.timestamp for e in system.audit_log], default=0)
        return system
