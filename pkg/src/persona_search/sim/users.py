"""Synthetic users drawn from named archetypes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .._validation import check_distribution
from ..exceptions import ConfigError
from .corpus import Intent

# archetype -> (dominant-intent mass, number of intents in the profile, patience)
ARCHETYPES: dict[str, tuple[float, int, float]] = {
    "focused": (0.8, 2, 0.7),
    "explorer": (0.5, 3, 0.4),
}


@dataclass(frozen=True)
class SyntheticUser:
    user_id: str
    archetype: str
    preferred_domain: str
    intent_profile: tuple[tuple[str, float], ...]
    patience: float
    success_condition: tuple[str, int]

    def __post_init__(self):
        if not 0.0 < self.patience <= 1.0:
            raise ValueError(f"patience must lie in (0, 1], got {self.patience}")
        check_distribution([p for _, p in self.intent_profile], "intent_profile")

    @property
    def dominant_intent(self) -> str:
        return max(self.intent_profile, key=lambda ip: (ip[1], ip[0]))[0]

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "archetype": self.archetype,
            "preferred_domain": self.preferred_domain,
            "intent_profile": [list(ip) for ip in self.intent_profile],
            "patience": self.patience,
            "success_condition": list(self.success_condition),
        }


def generate_users(
    spec: Mapping[str, int],
    seed: int,
    intents: Sequence[Intent],
    success_min_grade: int = 3,
) -> list[SyntheticUser]:
    """Build ``spec[archetype]`` users per archetype, in spec order.

    The dominant intent is drawn first; the remaining profile mass goes to
    sibling intents of the same query family when available.
    """
    if not spec or sum(spec.values()) <= 0:
        raise ConfigError("user spec is empty")
    unknown = set(spec) - set(ARCHETYPES)
    if unknown:
        raise ConfigError(f"unknown user archetypes: {sorted(unknown)}")
    if not intents:
        raise ConfigError("no intents to draw user profiles from")
    rng = np.random.default_rng(seed)
    by_family: dict[int, list[Intent]] = {}
    for it in intents:
        by_family.setdefault(it.family, []).append(it)

    users = []
    for archetype, count in spec.items():
        mass, width, patience = ARCHETYPES[archetype]
        for _ in range(int(count)):
            dom = intents[int(rng.integers(len(intents)))]
            siblings = [i for i in by_family[dom.family] if i.id != dom.id]
            others = [i for i in intents if i.id != dom.id and i.family != dom.family]
            order = list(rng.permutation(len(siblings)))
            rest = [siblings[j] for j in order] + [others[int(j)] for j in rng.permutation(len(others))]
            rest = rest[: width - 1]
            if rest:
                split = rng.dirichlet(np.ones(len(rest))) * (1.0 - mass)
                profile = [(dom.id, mass)] + [(r.id, float(s)) for r, s in zip(rest, split)]
            else:
                profile = [(dom.id, 1.0)]
            total = sum(p for _, p in profile)
            profile = tuple((i, p / total) for i, p in profile)
            users.append(
                SyntheticUser(
                    f"u{len(users):03d}",
                    archetype,
                    dom.domain,
                    profile,
                    patience,
                    (dom.id, success_min_grade),
                )
            )
    return users
