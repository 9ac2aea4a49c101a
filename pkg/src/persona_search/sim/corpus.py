"""Synthetic graded corpus with query families and domain-bound intents.

Each query family has a handful of shared words and several intents. An
intent has its own words and lives mostly in one domain, so a persona whose
domain matches a user's preferred domain tends to surface that user's docs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..retrieval import Document

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(3))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass(frozen=True)
class Intent:
    id: str
    family: int
    domain: str
    words: tuple[str, ...]


@dataclass(frozen=True)
class QueryFamily:
    index: int
    words: tuple[str, ...]
    intents: tuple[Intent, ...]


@dataclass
class SyntheticCorpus:
    documents: list[Document]
    families: list[QueryFamily]
    noise: list[str]

    @property
    def intents(self) -> dict[str, Intent]:
        return {i.id: i for f in self.families for i in f.intents}

    def family_of(self, intent_id: str) -> QueryFamily:
        return self.families[self.intents[intent_id].family]


def generate_corpus(
    domains: Sequence[str],
    n_docs: int = 500,
    n_families: int = 8,
    intents_per_family: int = 3,
    seed: int = 0,
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    noise = _words(rng, 150, taken)
    families = []
    for f in range(n_families):
        fam_words = tuple(_words(rng, 3, taken))
        doms = rng.choice(len(domains), size=min(intents_per_family, len(domains)), replace=False)
        intents = tuple(
            Intent(f"f{f}.i{j}", f, domains[int(d)], tuple(_words(rng, 3, taken))) for j, d in enumerate(doms)
        )
        families.append(QueryFamily(f, fam_words, intents))

    docs = []
    for n in range(n_docs):
        fam = families[int(rng.integers(n_families))]
        intent = fam.intents[int(rng.integers(len(fam.intents)))]
        grade = int(rng.choice([1, 2, 3, 4], p=[0.3, 0.3, 0.25, 0.15]))
        domain = intent.domain if rng.random() < 0.8 else domains[int(rng.integers(len(domains)))]
        grades = {intent.id: grade}
        for sib in fam.intents:
            if sib.id != intent.id and rng.random() < 0.3:
                grades[sib.id] = 1
        words = list(rng.choice(fam.words, size=2))
        words += list(rng.choice(intent.words, size=grade))
        words += [domain.lower()]
        words += list(rng.choice(noise, size=6))
        rng.shuffle(words)
        docs.append(Document(f"d{n:04d}", " ".join(words), domain, grades))
    return SyntheticCorpus(docs, families, noise)
