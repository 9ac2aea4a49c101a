"""Persona-routed multi-agent search with layered memory, rank fusion and bandit routing."""
from .agent import MockBackend, PersonaAgent, PipeBackend
from .arbiter import citation_coverage, diversify_err_ia, rrf_fuse, synthesize, weighted_fuse
from .config import Config, load_config
from .context import Click, ContextEncoder, Query, SessionContext
from .coordinator import Coordinator
from .exceptions import PersonaSearchError
from .learning import LinUCBRouter, ThompsonRouter, compose_reward, doubly_robust, ips, snips
from .memory import MemorySystem
from .metrics import err_at_k, err_ia_at_k, ndcg_at_k, subtopic_coverage
from .personas import Persona, PersonaRegistry
from .retrieval import Document, Index, LocalRetriever, load_corpus
from .system import System, build_system

__version__ = "0.1.0"

__all__ = [
    "Click",
    "Config",
    "ContextEncoder",
    "Coordinator",
    "Document",
    "Index",
    "LinUCBRouter",
    "LocalRetriever",
    "MemorySystem",
    "MockBackend",
    "Persona",
    "PersonaAgent",
    "PersonaRegistry",
    "PersonaSearchError",
    "PipeBackend",
    "Query",
    "SessionContext",
    "System",
    "ThompsonRouter",
    "build_system",
    "citation_coverage",
    "compose_reward",
    "diversify_err_ia",
    "doubly_robust",
    "err_at_k",
    "err_ia_at_k",
    "ips",
    "load_config",
    "load_corpus",
    "ndcg_at_k",
    "rrf_fuse",
    "snips",
    "subtopic_coverage",
    "synthesize",
    "weighted_fuse",
]
