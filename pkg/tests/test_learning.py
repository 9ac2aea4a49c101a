import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from persona_search.exceptions import EstimationError
from persona_search.learning import (
    Arm,
    LinUCBRouter,
    LoggedDecision,
    ThompsonRouter,
    compose_reward,
    doubly_robust,
    effective_epsilon,
    fit_q_model,
    ips,
    linucb_select,
    linucb_update,
    snips,
)


def test_compose_reward_examples():
    assert compose_reward(True, 60, True, 0) == pytest.approx(1.0)
    assert compose_reward(False, 0, False, 4000) == pytest.approx(-0.1)
    assert compose_reward(True, 30, False, 2000) == pytest.approx(0.3 + 0.1 - 0.05)
    assert compose_reward(True, 600, True, 0, weights=(1, 1, 1, 0)) == 1.0
    assert compose_reward(False, 0, False, 1e9) == -1.0


def test_arm_roundtrip():
    arm = Arm(("p00", "p01"), "relay")
    assert arm.id == "p00+p01/relay"
    assert Arm.parse(arm.id) == arm


def test_effective_epsilon():
    assert effective_epsilon(0.05, 0.05, 1) == 0.0
    assert effective_epsilon(0.05, 0.05, 2) == 0.05
    assert effective_epsilon(0.05, 0.05, 4) == pytest.approx(0.15)
    assert effective_epsilon(0.9, 0.0, 2) == 0.5


def test_linucb_fresh_index_is_alpha_norm():
    r = LinUCBRouter(["a", "b"], alpha=0.5)
    assert r.ucb([1.0]).tolist() == [0.5, 0.5]
    assert linucb_select([1.0], r) == ("a", 0.95)


def test_linucb_zero_features_leave_state():
    r = LinUCBRouter(["a"], alpha=0.5)
    linucb_update(r, "a", [0.0, 0.0], 1.0)
    assert np.array_equal(r.A_[0], np.eye(2)) and np.array_equal(r.b_[0], np.zeros(2))


def test_linucb_repeated_update():
    x = np.array([0.6, 0.8])
    r = LinUCBRouter(["a", "b"])
    r.partial_fit(x, "a", 1.0).partial_fit(x, "a", 1.0)
    assert np.allclose(r.A_[0], np.eye(2) + 2 * np.outer(x, x))
    assert np.allclose(r.b_[0], 2 * x)
    assert np.array_equal(r.A_[1], np.eye(2))
    # ridge estimate by hand: (I + 2xx^T)^-1 2x = 2x / (1 + 2|x|^2)
    assert np.allclose(r.theta()[0], 2 * x / 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(-2, 2), min_size=3, max_size=3), min_size=1, max_size=20))
def test_linucb_A_stays_positive_definite(rows):
    r = LinUCBRouter(["a"], discount=0.9)
    for x in rows:
        r.partial_fit(x, "a", 0.5)
    np.linalg.cholesky(r.A_[0])


def test_linucb_learns_best_arm():
    rng = np.random.default_rng(0)
    r = LinUCBRouter(["a", "b"], alpha=0.3, random_state=0)
    for _ in range(300):
        arm, _ = r.select([1.0])
        r.partial_fit([1.0], arm, (0.8 if arm == "b" else 0.2) + rng.normal(0, 0.05))
    assert r.predict([[1.0]]) == ["b"]
    assert r.policy([1.0]) == {"a": 0.05, "b": 0.95}


def test_linucb_is_sklearn_estimator():
    r = LinUCBRouter(["a", "b"], alpha=0.7)
    assert clone(r).get_params()["alpha"] == 0.7
    r.fit([[1.0], [1.0]], ["a", "b"], [0.0, 1.0])
    assert r.n_updates_.tolist() == [1, 1]
    with pytest.raises(ValueError):
        r.partial_fit([1.0, 2.0], "a", 1.0)
    with pytest.raises(ValueError):
        r.partial_fit([1.0], "a", float("nan"))
    with pytest.raises(KeyError):
        r.partial_fit([1.0], "zzz", 1.0)


def test_linucb_propensities_sum_to_one_and_floor():
    r = LinUCBRouter(["a", "b", "c", "d"], epsilon=0.01, epsilon_floor=0.05)
    p = r.policy([1.0, 0.0])
    assert sum(p.values()) == pytest.approx(1.0)
    assert min(p.values()) >= 0.05 - 1e-12


def test_thompson_sigma_zero_is_greedy():
    ts = ThompsonRouter(["a", "b"], sigma=0.0, epsilon=0.0, epsilon_floor=0.0, random_state=0)
    lin = LinUCBRouter(["a", "b"], alpha=0.0)
    for arm, rew in [("a", 0.2), ("b", 0.9), ("a", 0.1)]:
        ts.partial_fit([1.0], arm, rew)
        lin.partial_fit([1.0], arm, rew)
    assert ts.selection_frequencies([1.0], 50) == {"a": 0.0, "b": 1.0}
    assert ts.predict([[1.0]]) == lin.predict([[1.0]]) == ["b"]


def test_thompson_fresh_frequencies_are_uniform():
    ts = ThompsonRouter(["a", "b", "c"], sigma=1.0, random_state=1)
    freq = ts.selection_frequencies([1.0], 6000)
    for v in freq.values():
        assert abs(v - 1 / 3) < 0.03
    p = ts.policy([1.0])
    assert sum(p.values()) == pytest.approx(1.0)
    assert min(p.values()) >= 0.05


def _logs(n, rng, mean, prop):
    arms = list(mean)
    out = []
    for _ in range(n):
        a = arms[rng.choice(len(arms), p=[prop[x] for x in arms])]
        out.append(LoggedDecision((1.0,), a, prop[a], float(mean[a] + rng.normal(0, 0.1))))
    return out


def test_ips_snips_fixture():
    logs = [LoggedDecision((1.0,), "a", 0.5, 1.0), LoggedDecision((1.0,), "b", 0.5, 0.0)]
    assert ips(logs, "a").estimate == 1.0
    assert snips(logs, "a").estimate == 1.0
    assert snips(logs, {"a": 0.5, "b": 0.5}).estimate == 0.5


def test_ope_errors():
    with pytest.raises(EstimationError):
        ips([], "a")
    with pytest.raises(EstimationError):
        ips([LoggedDecision((1.0,), "a", 0.0, 1.0)], "a")
    with pytest.raises(EstimationError):
        snips([LoggedDecision((1.0,), "a", 0.5, 1.0)], "b")


def test_dr_reduces_to_ips_and_direct():
    rng = np.random.default_rng(0)
    logs = _logs(200, rng, {"a": 0.2, "b": 0.7}, {"a": 0.5, "b": 0.5})
    target = {"a": 0.2, "b": 0.8}
    zero = {"a": 0.0, "b": 0.0}
    assert doubly_robust(logs, target, zero).estimate == pytest.approx(ips(logs, target).estimate, abs=1e-12)
    q = {"a": 0.3, "b": 0.6}
    exact = [LoggedDecision(l.features, l.arm, l.propensity, q[l.arm]) for l in logs]
    assert doubly_robust(exact, target, q).estimate == pytest.approx(0.2 * 0.3 + 0.8 * 0.6, abs=1e-12)


def test_ope_recovers_true_value():
    rng = np.random.default_rng(4)
    mean = {"a": 0.2, "b": 0.5, "c": 0.9}
    logs = _logs(20000, rng, mean, {"a": 0.6, "b": 0.3, "c": 0.1})
    true = 0.9
    for est in (ips(logs, "c"), snips(logs, "c"), doubly_robust(logs, "c", fit_q_model(logs))):
        assert abs(est.estimate - true) < 3 * est.std_error + 0.02


def test_dr_survives_misspecified_propensities_with_exact_model():
    rng = np.random.default_rng(5)
    mean = {"a": 0.2, "b": 0.7}
    logs = _logs(5000, rng, mean, {"a": 0.8, "b": 0.2})
    wrong = [LoggedDecision(l.features, l.arm, min(1.0, 2 * l.propensity), l.reward) for l in logs]
    assert abs(doubly_robust(wrong, "b", mean).estimate - 0.7) < 0.01
    assert abs(ips(wrong, "b").estimate - 0.7) > 0.2
