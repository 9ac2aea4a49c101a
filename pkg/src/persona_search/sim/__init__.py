"""Desk-scale simulator: synthetic corpus, users, clicks, sessions, experiments."""
from .clicks import ClickOutcome, cascade_click
from .corpus import Intent, QueryFamily, SyntheticCorpus, generate_corpus
from .experiments import EXPERIMENTS, run_experiment
from .session import SessionLog, SimulationResult, make_query, run_simulation, simulate_session, summarize
from .users import ARCHETYPES, SyntheticUser, generate_users

__all__ = [
    "ARCHETYPES",
    "ClickOutcome",
    "EXPERIMENTS",
    "Intent",
    "QueryFamily",
    "SessionLog",
    "SimulationResult",
    "SyntheticCorpus",
    "SyntheticUser",
    "cascade_click",
    "generate_corpus",
    "generate_users",
    "make_query",
    "run_experiment",
    "run_simulation",
    "simulate_session",
    "summarize",
]
