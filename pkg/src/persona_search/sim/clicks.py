"""Cascade click model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..context import Click
from ..metrics import relevance_prob

DWELL_PER_GRADE = 15.0


@dataclass(frozen=True)
class ClickOutcome:
    clicks: tuple[Click, ...]

    @property
    def dwell(self) -> float:
        return float(sum(c.dwell for c in self.clicks))

    @property
    def doc_ids(self) -> list[str]:
        return [c.doc_id for c in self.clicks]


def cascade_click(
    ranking: Sequence[str],
    user,
    seed: int | np.random.Generator,
    grades: Mapping[str, Mapping[str, int]],
    g_max: int = 4,
    intent: str | None = None,
) -> ClickOutcome:
    """Scan top-down, click with R(grade), stop after a click with prob. patience.

    ``grades`` maps doc id to its per-intent grades; the user's dominant
    intent is used unless ``intent`` is given.
    """
    if not len(ranking):
        raise ValueError("ranking must be non-empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    intent = intent or user.dominant_intent
    clicks = []
    for rank, doc_id in enumerate(ranking, start=1):
        g = int(grades.get(doc_id, {}).get(intent, 0))
        if rng.random() < relevance_prob(g, g_max):
            clicks.append(Click(doc_id, rank, DWELL_PER_GRADE * g))
            if rng.random() < user.patience:
                break
    return ClickOutcome(tuple(clicks))
