"""Configuration tree and loader.

Every tunable constant lives here. A config file (YAML or JSON) mirrors the
section layout below; unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .exceptions import ConfigError


@dataclass
class PersonaConfig:
    roles: list[str] = field(
        default_factory=lambda: ["synthesizer", "critic", "librarian", "judge"]
    )
    expertise: list[str] = field(
        default_factory=lambda: ["academic-IR", "programming", "health", "general"]
    )
    task_contexts: list[str] = field(
        default_factory=lambda: ["exploratory", "decision", "lookup"]
    )
    domains: list[str] = field(
        default_factory=lambda: [
            "LLM-systems",
            "transportation-safety",
            "software",
            "medicine",
            "finance",
            "education",
        ]
    )
    # each entry: [role, expertise, task_context, domain]
    personas: list[list[str]] = field(default_factory=list)
    dim: int = 32
    seed: int = 7


@dataclass
class EncoderConfig:
    d_phi: int = 64
    seed: int = 11
    recency_half_life: float = 3.0
    click_scale: float = 3.0
    dwell_scale: float = 30.0
    turn_scale: float = 5.0
    length_scale: float = 8.0


@dataclass
class MemoryConfig:
    w_cap: int = 8
    half_life: float = 20.0
    eps_purge: float = 0.05
    retention_limit: int = 500
    n_min: int = 3
    s_min: int = 2
    retrieve_limit: int = 5
    record_token_cap: int = 48
    separation: bool = True
    episodic: bool = True
    redact_patterns: list[str] = field(default_factory=list)
    journal_dir: Optional[str] = None


@dataclass
class RetrievalConfig:
    k1: float = 1.2
    b: float = 0.75
    domain_boost: float = 1.5
    top_n: int = 10
    g_max: int = 4


@dataclass
class AgentConfig:
    familiarity_boost: float = 1.2
    token_cap: int = 4000
    n_notes: int = 10
    claim_tokens: int = 8
    call_delay_ms: float = 50.0


@dataclass
class CoordinatorConfig:
    theta: float = 0.3
    tau1: float = 0.4
    tau2: float = 0.7
    difficulty_weights: list[float] = field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])
    max_query_len: int = 12
    max_intents: int = 3
    intent_min_prob: float = 0.05
    r_max: int = 2
    est_tokens_per_agent: int = 1000
    k_max: int = 4
    relay_token_cap: int = 32
    budget: int = 2000
    routing: str = "static"  # static | uniform | linucb | thompson
    force_protocol: Optional[str] = None
    allow_debate: bool = True
    max_workers: int = 1
    seed: int = 3


@dataclass
class ArbiterConfig:
    k0: float = 60.0
    fusion: str = "rrf"  # rrf | weighted
    diversify: bool = True
    answer_k: int = 5
    pool_factor: int = 4
    hedge_threshold: float = 0.5


@dataclass
class LearningConfig:
    alpha: float = 0.5
    epsilon: float = 0.05
    epsilon_floor: float = 0.05
    discount: float = 1.0
    sigma: float = 0.3
    ts_samples: int = 200
    reward_weights: list[float] = field(default_factory=lambda: [0.3, 0.2, 0.5, 0.1])
    dwell_cap: float = 60.0
    token_cap: float = 4000.0
    # action menu: each entry {"personas": [ids...], "protocol": kind}; empty
    # means one single-persona independent arm per routable persona
    arms: list[dict[str, Any]] = field(default_factory=list)


@dataclass
class SimConfig:
    n_docs: int = 500
    n_families: int = 8
    intents_per_family: int = 3
    users: dict[str, int] = field(default_factory=lambda: {"focused": 4, "explorer": 2})
    n_sessions: int = 6
    max_turns: int = 8
    success_min_grade: int = 4
    corpus_path: Optional[str] = None


@dataclass
class Config:
    personas: PersonaConfig = field(default_factory=PersonaConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    coordinator: CoordinatorConfig = field(default_factory=CoordinatorConfig)
    arbiter: ArbiterConfig = field(default_factory=ArbiterConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **sections: dict[str, Any]) -> "Config":
        """Copy with per-section overrides, e.g. ``replace(memory={"w_cap": 4})``."""
        data = self.to_dict()
        for name, overrides in sections.items():
            if name not in data:
                raise ConfigError(f"unknown config section {name!r}")
            data[name].update(overrides)
        return config_from_dict(data)


def _build_section(cls, values: dict[str, Any], section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**values)


_POSITIVE = {
    "personas": ("dim",),
    "encoder": ("d_phi", "recency_half_life", "click_scale", "dwell_scale", "turn_scale", "length_scale"),
    "memory": ("w_cap", "half_life", "retention_limit", "n_min", "s_min", "record_token_cap"),
    "retrieval": ("top_n", "g_max"),
    "agent": ("token_cap", "n_notes", "claim_tokens"),
    "coordinator": ("max_query_len", "max_intents", "est_tokens_per_agent", "k_max", "relay_token_cap", "budget", "max_workers"),
    "arbiter": ("k0", "answer_k", "pool_factor"),
    "learning": ("dwell_cap", "token_cap", "ts_samples"),
    "sim": ("n_docs", "n_families", "intents_per_family", "n_sessions", "max_turns", "success_min_grade"),
}
_UNIT = {
    "memory": ("eps_purge",),
    "coordinator": ("theta", "tau1", "tau2", "intent_min_prob"),
    "arbiter": ("hedge_threshold",),
    "learning": ("epsilon", "epsilon_floor"),
}
_CHOICES = {
    ("coordinator", "routing"): ("static", "uniform", "linucb", "thompson"),
    ("coordinator", "force_protocol"): (None, "independent", "relay", "debate"),
    ("arbiter", "fusion"): ("rrf", "weighted"),
}


def validate(cfg: Config) -> Config:
    """Range and choice checks; raises ``ConfigError`` on the first bad value."""
    for section, keys in _POSITIVE.items():
        for key in keys:
            v = getattr(getattr(cfg, section), key)
            if not v > 0:
                raise ConfigError(f"{section}.{key} must be > 0, got {v!r}")
    for section, keys in _UNIT.items():
        for key in keys:
            v = getattr(getattr(cfg, section), key)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{section}.{key} must lie in [0, 1], got {v!r}")
    for (section, key), choices in _CHOICES.items():
        v = getattr(getattr(cfg, section), key)
        if v not in choices:
            raise ConfigError(f"{section}.{key} must be one of {list(choices)}, got {v!r}")
    cc, lc = cfg.coordinator, cfg.learning
    if cc.tau1 > cc.tau2:
        raise ConfigError("coordinator.tau1 must not exceed tau2")
    if len(cc.difficulty_weights) != 3 or any(w < 0 for w in cc.difficulty_weights):
        raise ConfigError("coordinator.difficulty_weights needs three non-negative weights")
    if cc.r_max < 0:
        raise ConfigError("coordinator.r_max must be >= 0")
    if not 0.0 < lc.discount <= 1.0:
        raise ConfigError("learning.discount must lie in (0, 1]")
    if len(lc.reward_weights) != 4:
        raise ConfigError("learning.reward_weights needs four weights")
    if cfg.retrieval.domain_boost < 1:
        raise ConfigError("retrieval.domain_boost must be >= 1")
    if cfg.agent.familiarity_boost <= 0:
        raise ConfigError("agent.familiarity_boost must be > 0")
    return cfg


def config_from_dict(data: dict[str, Any]) -> Config:
    sections = {f.name: f.type for f in dataclasses.fields(Config)}
    unknown = set(data) - set(sections)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(Config):
        cls = f.default_factory  # section dataclass
        kwargs[f.name] = _build_section(cls, dict(data.get(f.name) or {}), f.name)
    return validate(Config(**kwargs))


def load_config(path: str | Path | None) -> Config:
    """Load a YAML or JSON config file; ``None`` gives the defaults."""
    if path is None:
        return Config()
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    return config_from_dict(data or {})
