import numpy as np
import pytest

from persona_search.exceptions import ConflictError, NotFoundError, VocabularyError
from persona_search.personas import PersonaRegistry

VOCAB = {
    "role": ["synthesizer", "critic", "librarian", "judge"],
    "expertise": ["academic-IR", "programming", "health", "general"],
    "task_context": ["exploratory", "decision", "lookup"],
    "domain": ["LLM-systems", "transportation-safety", "software", "medicine"],
}


@pytest.fixture
def registry():
    return PersonaRegistry(VOCAB, dim=32, seed=7)


def test_first_registration_gets_an_id(registry):
    pid = registry.register("synthesizer", "academic-IR", "exploratory", "LLM-systems")
    assert pid in registry
    assert len(registry) == 1


def test_duplicate_tuple_conflicts(registry):
    registry.register("synthesizer", "academic-IR", "exploratory", "LLM-systems")
    with pytest.raises(ConflictError):
        registry.register("synthesizer", "academic-IR", "exploratory", "LLM-systems")


def test_distinct_tuples_distinct_ids(registry):
    a = registry.register("synthesizer", "academic-IR", "exploratory", "LLM-systems")
    b = registry.register("critic", "programming", "decision", "transportation-safety")
    assert a != b


def test_unknown_facet_token(registry):
    with pytest.raises(VocabularyError):
        registry.register("wizard", "academic-IR", "exploratory", "LLM-systems")


def test_unknown_id(registry):
    with pytest.raises(NotFoundError):
        registry.get("p99")


def test_embedding_dimension_and_determinism():
    reg = PersonaRegistry(VOCAB, dim=8, seed=7)
    pid = reg.register("critic", "health", "lookup", "medicine")
    v = reg.embed(pid)
    assert v.shape == (8,)
    np.testing.assert_array_equal(v, reg.embed(pid))
    again = PersonaRegistry(VOCAB, dim=8, seed=7)
    np.testing.assert_array_equal(v, again.embed(again.register("critic", "health", "lookup", "medicine")))


def _oracle_block(facet, token, vocab, block_dim, seed):
    # independent re-derivation: seeded Gaussian rows, Gram-Schmidt in vocabulary order
    from persona_search._text import stable_hash

    rows = [np.random.default_rng(stable_hash(facet, t, seed=seed)).standard_normal(block_dim) for t in vocab]
    basis = []
    for r in rows:
        v = r.copy()
        for b in basis:
            v -= (v @ b) * b
        basis.append(v / np.linalg.norm(v))
    return basis[vocab.index(token)]


def test_embedding_matches_oracle_blocks(registry):
    pid = registry.register("librarian", "programming", "lookup", "software")
    expected = np.concatenate(
        [
            _oracle_block(f, t, VOCAB[f], 8, 7)
            for f, t in zip(VOCAB, ("librarian", "programming", "lookup", "software"))
        ]
    )
    np.testing.assert_allclose(registry.embed(pid), expected, atol=1e-10)


def test_dot_products_order_by_shared_facets(registry):
    base = registry.register("synthesizer", "academic-IR", "exploratory", "LLM-systems")
    one_diff = registry.register("critic", "academic-IR", "exploratory", "LLM-systems")
    all_diff = registry.register("librarian", "programming", "decision", "software")
    e = registry.embed
    close = e(base) @ e(one_diff)
    far = e(base) @ e(all_diff)
    assert close > far
    assert close == pytest.approx(3.0, abs=1e-9)
    assert far == pytest.approx(0.0, abs=1e-9)


def test_judges_are_not_routable(registry):
    a = registry.register("synthesizer", "academic-IR", "exploratory", "LLM-systems")
    j = registry.register("judge", "general", "decision", "LLM-systems")
    assert registry.routable_ids() == [a]
    assert registry.judge_id() == j
