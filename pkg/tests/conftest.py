import pytest

from persona_search.config import Config
from persona_search.memory import MemorySystem, MemoryUpdate
from persona_search.retrieval import Document
from persona_search.system import build_system


def make_update(user="u1", session="s1", query="rust parsers", turn=0, agent="p00", accessed=()):
    return MemoryUpdate(
        user_id=user,
        session_id=session,
        query=query,
        turn=turn,
        shown=["d1"],
        notes=[f"note about {query}"],
        trace=f"trace {query}",
        provenance={"session_id": session, "agent_id": agent, "origin": "test"},
        accessed=list(accessed),
    )


TOY_DOCS = [
    Document("d1", "rust parser combinators for json", "software", {"i1": 4}),
    Document("d2", "parsing expression grammars in rust", "software", {"i1": 3, "i2": 1}),
    Document("d3", "clinical trial design basics", "medicine", {"i2": 4}),
    Document("d4", "bond yield curves explained", "finance", {"i3": 3}),
    Document("d5", "transformer language model serving", "LLM-systems", {"i1": 1, "i3": 2}),
    Document("d6", "rail crossing safety statistics", "transportation-safety", {"i2": 2}),
]


# filled by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def cfg():
    return Config()


@pytest.fixture
def memory():
    return MemorySystem()


@pytest.fixture
def toy_system(cfg):
    return build_system(cfg, TOY_DOCS)
