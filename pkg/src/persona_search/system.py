"""Wiring: build a ready-to-run coordinator from a config and a corpus."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .agent import AgentBackend, MockBackend, PersonaAgent
from .config import Config
from .context import ContextEncoder
from .coordinator import Coordinator
from .learning import Arm, LinUCBRouter, ThompsonRouter
from .memory import MemorySystem
from .personas import PersonaRegistry
from .retrieval import Document, Index, LocalRetriever

DEFAULT_PERSONAS = [
    ["synthesizer", "academic-IR", "exploratory", "LLM-systems"],
    ["critic", "general", "decision", "transportation-safety"],
    ["librarian", "programming", "lookup", "software"],
    ["synthesizer", "health", "exploratory", "medicine"],
    ["critic", "general", "decision", "finance"],
    ["librarian", "academic-IR", "lookup", "education"],
    ["judge", "general", "decision", "LLM-systems"],
]


@dataclass
class System:
    cfg: Config
    registry: PersonaRegistry
    encoder: ContextEncoder
    memory: MemorySystem
    index: Index
    retriever: LocalRetriever
    backend: AgentBackend
    agent: PersonaAgent
    coordinator: Coordinator
    router: Optional[LinUCBRouter | ThompsonRouter]


def build_registry(cfg: Config) -> PersonaRegistry:
    pc = cfg.personas
    if not pc.personas:
        pc = type(pc)(**{**pc.__dict__, "personas": DEFAULT_PERSONAS})
    return PersonaRegistry.from_config(pc)


def default_arms(cfg: Config, registry: PersonaRegistry) -> list[str]:
    if cfg.learning.arms:
        return [Arm(tuple(a["personas"]), a.get("protocol", "independent")).id for a in cfg.learning.arms]
    return [Arm((pid,), "independent").id for pid in registry.routable_ids()]


def build_router(cfg: Config, registry: PersonaRegistry):
    lc, mode = cfg.learning, cfg.coordinator.routing
    arms = default_arms(cfg, registry)
    if mode == "linucb":
        return LinUCBRouter(arms, lc.alpha, lc.epsilon, lc.epsilon_floor, lc.discount, random_state=cfg.coordinator.seed)
    if mode == "thompson":
        return ThompsonRouter(
            arms, lc.sigma, lc.ts_samples, lc.epsilon, lc.epsilon_floor, lc.discount, random_state=cfg.coordinator.seed
        )
    if mode in ("static", "uniform"):
        return None
    raise ValueError(f"unknown routing mode {mode!r}")


def build_system(
    cfg: Config,
    documents: Sequence[Document],
    backend: AgentBackend | None = None,
    journal_dir: str | Path | None = None,
) -> System:
    registry = build_registry(cfg)
    encoder = ContextEncoder.from_config(cfg.encoder).fit()
    memory = MemorySystem.from_config(cfg.memory, journal_dir=journal_dir)
    index = Index(documents, cfg.retrieval.k1, cfg.retrieval.b)
    retriever = LocalRetriever(index, cfg.retrieval.domain_boost)
    backend = backend or MockBackend(cfg.agent.n_notes, cfg.agent.claim_tokens)
    agent = PersonaAgent.from_index(index, retriever, memory, backend, cfg)
    router = build_router(cfg, registry)
    coordinator = Coordinator(registry, encoder, memory, agent, index, cfg, router)
    return System(cfg, registry, encoder, memory, index, retriever, backend, agent, coordinator, router)
