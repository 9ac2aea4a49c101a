import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from persona_search.metrics import Judgment, err_at_k, err_ia_at_k, ndcg_at_k, subtopic_coverage, utility_per_token

import oracles


def test_ndcg_examples():
    assert ndcg_at_k(["a", "b"], {"a": 3, "b": 2}, 2) == 1.0
    assert ndcg_at_k(["a", "b"], {"a": 0, "b": 3}, 2) == pytest.approx(7 / np.log2(3) / 7)
    assert ndcg_at_k(["a", "b"], {"a": 0, "b": 3}, 2) == pytest.approx(0.6309, abs=1e-4)
    assert ndcg_at_k(["a"], {"a": 0}, 1) == 0.0


def test_err_examples():
    assert err_at_k(["a"], {"a": 4}, 1) == 0.9375
    assert err_at_k(["a", "b"], {}, 2) == 0.0


def test_err_ia_examples():
    j = Judgment({"a": {"A": 4}}, {"A": 0.5, "B": 0.5})
    assert err_ia_at_k(["a"], j, 5) == 0.46875
    one = Judgment({"a": {"A": 3}, "b": {"A": 1}}, {"A": 1.0})
    assert err_ia_at_k(["b", "a"], one, 2) == err_at_k(["b", "a"], {"a": 3, "b": 1}, 2)


def test_coverage_examples():
    j = Judgment({"a": {"A": 2}, "b": {"B": 1}}, {"A": 0.5, "B": 0.5})
    assert subtopic_coverage(["a", "b"], j, 2) == 1.0
    assert subtopic_coverage(["a"], j, 2) == 0.5
    assert subtopic_coverage([], j, 2) == 0.0


def test_utility_per_token_examples():
    assert utility_per_token([{"reward": 1.0, "tokens": 1000}]) == 0.001
    assert utility_per_token([{"reward": 1.0, "tokens": 2000}]) == 0.0005
    assert utility_per_token([{"reward": 0.0, "tokens": 10}]) == 0.0


def test_metrics_match_oracles_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        ranking, grades, dist = oracles.random_instance(rng)
        j = Judgment(grades, dist)
        k = int(rng.integers(1, 9))
        t0 = next(iter(dist))
        single = j.for_intent(t0)
        assert abs(ndcg_at_k(ranking, single, k) - oracles.ndcg(ranking, single, k)) <= 1e-12
        assert abs(err_at_k(ranking, single, k) - oracles.err(ranking, single, k)) <= 1e-12
        assert abs(err_ia_at_k(ranking, j, k) - oracles.err_ia(ranking, grades, dist, k)) <= 1e-12
        assert abs(subtopic_coverage(ranking, j, k) - oracles.coverage(ranking, grades, dist, k)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=7), st.randoms(use_true_random=False))
def test_ndcg_bounded_and_max_at_sorted(grades_list, rnd):
    grades = {f"d{i}": g for i, g in enumerate(grades_list)}
    ids = list(grades)
    rnd.shuffle(ids)
    k = len(ids)
    v = ndcg_at_k(ids, grades, k)
    assert 0.0 <= v <= 1.0 + 1e-12
    best = sorted(grades, key=lambda d: -grades[d])
    if any(grades_list):
        assert ndcg_at_k(best, grades, k) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=6), st.integers(0, 4))
def test_err_monotone_in_appending(grades_list, extra):
    grades = {f"d{i}": g for i, g in enumerate(grades_list)}
    ids = list(grades)
    grades["new"] = extra
    assert err_at_k(ids + ["new"], grades, len(ids) + 1) >= err_at_k(ids, grades, len(ids))


def test_err_ia_linear_in_intent_dist():
    rng = np.random.default_rng(3)
    ranking, grades, _ = oracles.random_instance(rng)
    p1 = {"t0": 0.2, "t1": 0.3, "t2": 0.5}
    p2 = {"t0": 0.6, "t1": 0.4, "t2": 0.0}
    a = 0.3
    mix = {t: a * p1[t] + (1 - a) * p2[t] for t in p1}
    lhs = err_ia_at_k(ranking, Judgment(grades, mix), 5)
    rhs = a * err_ia_at_k(ranking, Judgment(grades, p1), 5) + (1 - a) * err_ia_at_k(ranking, Judgment(grades, p2), 5)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_relabeling_invariance():
    rng = np.random.default_rng(5)
    ranking, grades, dist = oracles.random_instance(rng)
    rename = {d: f"x{d}" for d in grades}
    g2 = {rename[d]: g for d, g in grades.items()}
    r2 = [rename[d] for d in ranking]
    assert err_ia_at_k(ranking, Judgment(grades, dist), 5) == err_ia_at_k(r2, Judgment(g2, dist), 5)
