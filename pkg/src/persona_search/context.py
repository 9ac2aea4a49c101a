"""Query/session types and the context feature map.

The feature vector is laid out as four named slices::

    [ lexical | recency | click | task ]

``lexical`` is a signed feature hash of the query tokens, ``recency`` a
recency-weighted hash of prior-query tokens, ``click`` holds squashed click
count and mean dwell, and ``task`` holds a bias term, turn index and query
length. Hashed slices are L2-normalized on their own so that a change in one
input group only moves its own slice.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._text import overlap_coefficient, stable_hash, tokenize
from ._validation import check_distribution

N_CLICK = 2
N_TASK = 3


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    turn: int = 0
    intent_dist: Optional[tuple[tuple[str, float], ...]] = None

    def __post_init__(self):
        if self.turn < 0:
            raise ValueError("turn must be non-negative")
        if self.intent_dist is not None:
            object.__setattr__(self, "intent_dist", tuple((str(i), float(p)) for i, p in self.intent_dist))
            check_distribution([p for _, p in self.intent_dist], "intent_dist")

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    def intents(self) -> dict[str, float]:
        return dict(self.intent_dist) if self.intent_dist else {}

    def with_text(self, text: str) -> "Query":
        return replace(self, text=text)


@dataclass(frozen=True)
class Click:
    doc_id: str
    rank: int
    dwell: float

    def __post_init__(self):
        if self.dwell < 0:
            raise ValueError("dwell must be non-negative")


@dataclass(frozen=True)
class SessionContext:
    session_id: str
    user_id: str = ""
    prior_queries: tuple[Query, ...] = ()
    clicks: tuple[Click, ...] = ()
    side_signals: Mapping[str, object] = field(default_factory=dict)
    # notes handed over by a relay predecessor: (claim, doc_ids, confidence)
    handoff_notes: tuple = ()

    @property
    def turn_index(self) -> int:
        return len(self.prior_queries)

    @property
    def owner(self) -> str:
        return self.user_id or self.session_id

    def advance(self, query: Query, clicks: Iterable[Click] = ()) -> "SessionContext":
        """Context for the next turn after ``query`` was answered."""
        return replace(
            self,
            prior_queries=self.prior_queries + (query,),
            clicks=self.clicks + tuple(clicks),
            handoff_notes=(),
        )

    def with_clicks(self, clicks: Iterable[Click]) -> "SessionContext":
        return replace(self, clicks=self.clicks + tuple(clicks))

    def with_handoff(self, notes: Sequence) -> "SessionContext":
        return replace(self, handoff_notes=tuple(notes))


@dataclass(frozen=True)
class ContextFeatures:
    vector: np.ndarray
    slices: Mapping[str, slice]

    def part(self, name: str) -> np.ndarray:
        return self.vector[self.slices[name]]

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def digest(self) -> str:
        return f"{stable_hash(*np.round(self.vector, 12).tolist()):016x}"


def _hash_into(tokens_weights: Iterable[tuple[str, float]], width: int, seed: int) -> np.ndarray:
    out = np.zeros(width)
    for token, weight in tokens_weights:
        h = stable_hash(token, seed=seed)
        sign = 1.0 if (h >> 63) & 1 else -1.0
        out[h % width] += sign * weight
    return out


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class ContextEncoder(TransformerMixin, BaseEstimator):
    """Deterministic feature map over (query, session context) pairs.

    ``transform`` takes a sequence of ``(Query, SessionContext)`` pairs and
    returns an ``(n, d_phi)`` array; ``encode`` handles one pair and keeps the
    slice layout.
    """

    def __init__(
        self,
        d_phi: int = 64,
        seed: int = 11,
        recency_half_life: float = 3.0,
        click_scale: float = 3.0,
        dwell_scale: float = 30.0,
        turn_scale: float = 5.0,
        length_scale: float = 8.0,
    ):
        self.d_phi = d_phi
        self.seed = seed
        self.recency_half_life = recency_half_life
        self.click_scale = click_scale
        self.dwell_scale = dwell_scale
        self.turn_scale = turn_scale
        self.length_scale = length_scale

    @classmethod
    def from_config(cls, cfg) -> "ContextEncoder":
        return cls(
            d_phi=cfg.d_phi,
            seed=cfg.seed,
            recency_half_life=cfg.recency_half_life,
            click_scale=cfg.click_scale,
            dwell_scale=cfg.dwell_scale,
            turn_scale=cfg.turn_scale,
            length_scale=cfg.length_scale,
        )

    def slices(self) -> dict[str, slice]:
        hashed = self.d_phi - N_CLICK - N_TASK
        if hashed < 2:
            raise ValueError(f"d_phi={self.d_phi} too small")
        n_lex = (hashed + 1) // 2
        n_rec = hashed - n_lex
        return {
            "lexical": slice(0, n_lex),
            "recency": slice(n_lex, n_lex + n_rec),
            "click": slice(n_lex + n_rec, n_lex + n_rec + N_CLICK),
            "task": slice(self.d_phi - N_TASK, self.d_phi),
        }

    def fit(self, X=None, y=None):
        self.slices_ = self.slices()
        self.n_features_out_ = self.d_phi
        return self

    def encode(self, query: Query, ctx: SessionContext) -> ContextFeatures:
        sl = self.slices()
        vec = np.zeros(self.d_phi)
        q_tokens = query.tokens
        lex_width = sl["lexical"].stop - sl["lexical"].start
        vec[sl["lexical"]] = _unit(_hash_into(((t, 1.0) for t in q_tokens), lex_width, self.seed))

        rec_width = sl["recency"].stop - sl["recency"].start
        weighted = []
        n_prior = len(ctx.prior_queries)
        for i, prior in enumerate(ctx.prior_queries):
            age = n_prior - i
            w = 0.5 ** (age / self.recency_half_life)
            weighted.extend((t, w) for t in prior.tokens)
        vec[sl["recency"]] = _unit(_hash_into(weighted, rec_width, self.seed + 1))

        n_clicks = len(ctx.clicks)
        if n_clicks:
            mean_dwell = sum(c.dwell for c in ctx.clicks) / n_clicks
            vec[sl["click"]] = [
                n_clicks / (n_clicks + self.click_scale),
                mean_dwell / (mean_dwell + self.dwell_scale),
            ]
        turn = ctx.turn_index
        vec[sl["task"]] = [
            1.0,
            turn / (turn + self.turn_scale),
            len(q_tokens) / (len(q_tokens) + self.length_scale),
        ]
        return ContextFeatures(vector=vec, slices=sl)

    def transform(self, X) -> np.ndarray:
        return np.vstack([self.encode(q, c).vector for q, c in X]) if len(X) else np.zeros((0, self.d_phi))


def novelty(query: Query | str, episodic_queries: Iterable[str]) -> float:
    """1 minus the best overlap coefficient against any stored query text.

    An empty store gives 1.0; an identical stored query gives 0.0.
    """
    text = query.text if isinstance(query, Query) else query
    q = set(tokenize(text))
    best = 0.0
    seen_any = False
    for stored in episodic_queries:
        seen_any = True
        s = set(tokenize(stored))
        if s == q:
            return 0.0
        best = max(best, overlap_coefficient(q, s))
    if not seen_any:
        return 1.0
    return max(0.0, min(1.0, 1.0 - best))
