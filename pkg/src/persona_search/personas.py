"""Persona facet vocabularies, registry and facet-block embeddings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._text import stable_hash
from .exceptions import ConfigError, ConflictError, NotFoundError, VocabularyError

FACETS = ("role", "expertise", "task_context", "domain")
JUDGE_ROLE = "judge"


@dataclass(frozen=True)
class Persona:
    id: str
    role: str
    expertise: str
    task_context: str
    domain: str

    @property
    def facets(self) -> tuple[str, str, str, str]:
        return (self.role, self.expertise, self.task_context, self.domain)

    @property
    def is_judge(self) -> bool:
        return self.role == JUDGE_ROLE


class PersonaRegistry:
    """Closed-vocabulary persona registry.

    Each facet token gets an embedding block at vocabulary registration time.
    Blocks within one facet are drawn from a seeded Gaussian and
    orthonormalized (while the vocabulary fits in the block), so the dot
    product of two persona embeddings equals the number of facets they share.

    Args:
        vocabularies: mapping facet name -> ordered token list.
        dim: total embedding dimension; must be divisible by 4.
        seed: seed for the block generator.
    """

    def __init__(self, vocabularies: dict[str, Sequence[str]], dim: int = 32, seed: int = 7):
        if dim <= 0 or dim % len(FACETS):
            raise ConfigError(f"embedding dim must be a positive multiple of 4, got {dim}")
        missing = set(FACETS) - set(vocabularies)
        if missing:
            raise ConfigError(f"missing facet vocabularies: {sorted(missing)}")
        self.dim = dim
        self.block_dim = dim // len(FACETS)
        self.seed = seed
        self._vocab: dict[str, tuple[str, ...]] = {}
        self._blocks: dict[str, dict[str, np.ndarray]] = {}
        for facet in FACETS:
            tokens = tuple(vocabularies[facet])
            if len(set(tokens)) != len(tokens):
                raise ConfigError(f"duplicate tokens in {facet} vocabulary")
            self._vocab[facet] = tokens
            self._blocks[facet] = self._make_blocks(facet, tokens)
        self._by_id: dict[str, Persona] = {}
        self._by_facets: dict[tuple[str, ...], str] = {}

    @classmethod
    def from_config(cls, cfg) -> "PersonaRegistry":
        registry = cls(
            {
                "role": cfg.roles,
                "expertise": cfg.expertise,
                "task_context": cfg.task_contexts,
                "domain": cfg.domains,
            },
            dim=cfg.dim,
            seed=cfg.seed,
        )
        for facets in cfg.personas:
            registry.register(*facets)
        return registry

    def _make_blocks(self, facet: str, tokens: tuple[str, ...]) -> dict[str, np.ndarray]:
        rows = []
        for token in tokens:
            rng = np.random.default_rng(stable_hash(facet, token, seed=self.seed))
            rows.append(rng.standard_normal(self.block_dim))
        if not rows:
            return {}
        mat = np.array(rows)
        if len(tokens) <= self.block_dim:
            # QR on the transposed stack = Gram-Schmidt in vocabulary order
            q, r = np.linalg.qr(mat.T)
            mat = (q * np.sign(np.diag(r))).T
        mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        return {tok: mat[i] for i, tok in enumerate(tokens)}

    def vocabulary(self, facet: str) -> tuple[str, ...]:
        return self._vocab[facet]

    def register(self, role: str, expertise: str, task_context: str, domain: str) -> str:
        """Register a persona and return its id (``p00``, ``p01``, ...)."""
        facets = (role, expertise, task_context, domain)
        for facet, token in zip(FACETS, facets):
            if token not in self._vocab[facet]:
                raise VocabularyError(f"{token!r} is not a registered {facet} token")
        if facets in self._by_facets:
            raise ConflictError(f"persona {facets} already registered as {self._by_facets[facets]}")
        pid = f"p{len(self._by_id):02d}"
        self._by_id[pid] = Persona(pid, *facets)
        self._by_facets[facets] = pid
        return pid

    def get(self, persona_id: str) -> Persona:
        try:
            return self._by_id[persona_id]
        except KeyError:
            raise NotFoundError(f"unknown persona {persona_id!r}") from None

    def lookup(self, *facets: str) -> str:
        try:
            return self._by_facets[tuple(facets)]
        except KeyError:
            raise NotFoundError(f"no persona with facets {facets}") from None

    def embed(self, persona_id: str) -> np.ndarray:
        """Concatenated per-facet blocks; length ``dim``."""
        persona = self.get(persona_id)
        return np.concatenate(
            [self._blocks[facet][tok] for facet, tok in zip(FACETS, persona.facets)]
        )

    def embedding_matrix(self, persona_ids: Iterable[str]) -> np.ndarray:
        return np.vstack([self.embed(pid) for pid in persona_ids])

    @property
    def ids(self) -> list[str]:
        return list(self._by_id)

    def routable_ids(self) -> list[str]:
        """Personas eligible for routing; judges are reserved for debates."""
        return [pid for pid, p in self._by_id.items() if not p.is_judge]

    def judge_id(self) -> str | None:
        for pid, p in self._by_id.items():
            if p.is_judge:
                return pid
        return None

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, persona_id: object) -> bool:
        return persona_id in self._by_id

    def __iter__(self):
        return iter(self._by_id.values())
