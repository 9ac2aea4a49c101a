"""Contextual-bandit routing, composite reward and off-policy estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state

from ._validation import check_feature_matrix, check_features
from .exceptions import EstimationError


def compose_reward(
    clicked: bool,
    dwell: float,
    success: bool,
    tokens: float,
    weights: Sequence[float] = (0.3, 0.2, 0.5, 0.1),
    dwell_cap: float = 60.0,
    token_cap: float = 4000.0,
) -> float:
    """Weighted click + dwell + success minus token cost, clamped to [-1, 1]."""
    w_c, w_d, w_s, w_t = weights
    r = (
        w_c * float(bool(clicked))
        + w_d * min(max(dwell, 0.0) / dwell_cap, 1.0)
        + w_s * float(bool(success))
        - w_t * (tokens / token_cap)
    )
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True, order=True)
class Arm:
    """An action: which personas run and under which protocol."""

    personas: tuple[str, ...]
    protocol: str = "independent"

    @property
    def id(self) -> str:
        return f"{'+'.join(self.personas)}/{self.protocol}"

    @classmethod
    def parse(cls, arm_id: str) -> "Arm":
        sig, protocol = arm_id.rsplit("/", 1)
        return cls(tuple(sig.split("+")), protocol)


def effective_epsilon(epsilon: float, floor: float, n_arms: int) -> float:
    """Smallest exploration rate >= epsilon that keeps every arm above ``floor``."""
    if n_arms <= 1:
        return 0.0
    return min(max(epsilon, floor * (n_arms - 1)), (n_arms - 1) / n_arms)


class _LinearBandit(BaseEstimator):
    """Shared ridge-regression state for the linear bandits."""

    def _init_state(self, d: int) -> None:
        n = len(self.arms)
        self.n_features_in_ = d
        self.A_ = np.stack([np.eye(d) for _ in range(n)])
        self.b_ = np.zeros((n, d))
        self.n_updates_ = np.zeros(n, dtype=int)
        self.rng_ = check_random_state(self.random_state)

    def _ensure(self, x: np.ndarray) -> None:
        if not hasattr(self, "A_"):
            self._init_state(x.shape[0])
        elif x.shape[0] != self.n_features_in_:
            raise ValueError(f"feature dimension {x.shape[0]} != {self.n_features_in_}")

    @property
    def arm_ids(self) -> list[str]:
        return [a if isinstance(a, str) else a.id for a in self.arms]

    def _index_of(self, arm) -> int:
        key = arm if isinstance(arm, str) else arm.id
        try:
            return self.arm_ids.index(key)
        except ValueError:
            raise KeyError(f"unknown arm {key!r}") from None

    def _tie_order(self) -> list[int]:
        return sorted(range(len(self.arms)), key=lambda i: self.arm_ids[i])

    def _argmax(self, values: np.ndarray) -> int:
        best = None
        for i in self._tie_order():
            if best is None or values[i] > values[best]:
                best = i
        return best

    def theta(self) -> np.ndarray:
        return np.stack([np.linalg.solve(A, b) for A, b in zip(self.A_, self.b_)])

    def partial_fit(self, x, arm, reward: float):
        """One ridge update: A += x x^T, b += r x (after optional discounting)."""
        x = check_features(x)
        if not math.isfinite(reward):
            raise ValueError(f"non-finite reward {reward!r}")
        self._ensure(x)
        i = self._index_of(arm)
        if self.discount < 1.0:
            eye = np.eye(self.n_features_in_)
            self.A_ = self.discount * self.A_ + (1.0 - self.discount) * eye
            self.b_ = self.discount * self.b_
        self.A_[i] += np.outer(x, x)
        self.b_[i] += reward * x
        self.n_updates_[i] += 1
        return self

    def fit(self, X, actions, rewards):
        """Reset and replay logged (features, arm, reward) triples."""
        X = check_feature_matrix(X)
        self._init_state(X.shape[1])
        for x, a, r in zip(X, actions, rewards):
            self.partial_fit(x, a, float(r))
        return self

    def predict(self, X) -> list[str]:
        """Greedy (no-exploration) arm id per row."""
        X = check_feature_matrix(X)
        return [self.arm_ids[self._argmax(row)] for row in self.decision_function(X)]


class LinUCBRouter(_LinearBandit):
    """Disjoint LinUCB over a fixed arm menu with epsilon-floored logging.

    Args:
        arms: arm ids or ``Arm`` objects.
        alpha: width of the confidence bonus.
        epsilon: exploration rate of the logging policy.
        epsilon_floor: minimum propensity any arm must keep.
        discount: per-update forgetting factor in (0, 1]; 1 disables it.
        random_state: seed for the exploration draws.
    """

    def __init__(self, arms=(), alpha=0.5, epsilon=0.05, epsilon_floor=0.05, discount=1.0, random_state=None):
        self.arms = arms
        self.alpha = alpha
        self.epsilon = epsilon
        self.epsilon_floor = epsilon_floor
        self.discount = discount
        self.random_state = random_state

    def ucb(self, x) -> np.ndarray:
        """Per-arm index theta^T x + alpha * sqrt(x^T A^-1 x)."""
        x = check_features(x)
        self._ensure(x)
        out = np.empty(len(self.arms))
        for i, (A, b) in enumerate(zip(self.A_, self.b_)):
            A_inv_x = np.linalg.solve(A, x)
            theta = np.linalg.solve(A, b)
            out[i] = theta @ x + self.alpha * math.sqrt(max(float(x @ A_inv_x), 0.0))
        return out

    def decision_function(self, X) -> np.ndarray:
        X = check_feature_matrix(X)
        return np.vstack([self.ucb(x) for x in X])

    def _policy_from(self, greedy: int) -> dict[str, float]:
        n = len(self.arms)
        eps = effective_epsilon(self.epsilon, self.epsilon_floor, n)
        return {aid: (1.0 - eps if i == greedy else eps / (n - 1)) for i, aid in enumerate(self.arm_ids)}

    def policy(self, x) -> dict[str, float]:
        """Logging-policy probabilities: greedy arm 1-eps, the rest share eps."""
        return self._policy_from(self._argmax(self.ucb(x)))

    def select(self, x) -> tuple[str, float]:
        """Draw an arm from the logging policy; returns (arm id, propensity)."""
        greedy = self._argmax(self.ucb(x))
        probs = self._policy_from(greedy)
        n = len(self.arms)
        arm = self.arm_ids[greedy]
        if n > 1 and self.rng_.random_sample() < effective_epsilon(self.epsilon, self.epsilon_floor, n):
            others = [a for a in self.arm_ids if a != arm]
            arm = others[self.rng_.randint(len(others))]
        return arm, probs[arm]


def linucb_select(features, router: LinUCBRouter) -> tuple[str, float]:
    """Greedy LinUCB arm and its logging propensity (no random draw)."""
    greedy = router._argmax(router.ucb(features))
    arm = router.arm_ids[greedy]
    return arm, router._policy_from(greedy)[arm]


def linucb_update(router: LinUCBRouter, arm, features, reward: float) -> None:
    router.partial_fit(features, arm, reward)


class ThompsonRouter(_LinearBandit):
    """Linear Thompson sampling with Monte-Carlo propensities.

    Args:
        arms: arm ids or ``Arm`` objects.
        sigma: posterior scale; 0 collapses to greedy on the ridge estimate.
        n_samples: resamples used to estimate the selection propensity.
        epsilon, epsilon_floor: uniform mixing that keeps every propensity
            above the floor.
    """

    def __init__(self, arms=(), sigma=0.3, n_samples=200, epsilon=0.05, epsilon_floor=0.05, discount=1.0, random_state=None):
        self.arms = arms
        self.sigma = sigma
        self.n_samples = n_samples
        self.epsilon = epsilon
        self.epsilon_floor = epsilon_floor
        self.discount = discount
        self.random_state = random_state

    def _sample_scores(self, x: np.ndarray, rng, n: int = 1) -> np.ndarray:
        """``(n, n_arms)`` scores x^T theta~ with theta~ ~ N(theta, sigma^2 A^-1)."""
        means = np.stack([np.linalg.solve(A, b) for A, b in zip(self.A_, self.b_)]) @ x
        if self.sigma <= 0:
            return np.tile(means, (n, 1))
        # x^T theta~ is Gaussian with variance sigma^2 x^T A^-1 x per arm
        chols = [np.linalg.cholesky(np.linalg.inv(A)) for A in self.A_]
        z = rng.standard_normal((n, len(self.arms), x.shape[0]))
        noise = np.einsum("nad,ad->na", z, np.stack([L.T @ x for L in chols]))
        return means + self.sigma * noise

    def decision_function(self, X) -> np.ndarray:
        X = check_feature_matrix(X)
        if not hasattr(self, "A_"):
            self._init_state(X.shape[1])
        theta = self.theta()
        return X @ theta.T

    def sample_arm(self, x) -> str:
        x = check_features(x)
        self._ensure(x)
        return self.arm_ids[self._argmax(self._sample_scores(x, self.rng_)[0])]

    def selection_frequencies(self, x, n_samples: int | None = None) -> dict[str, float]:
        x = check_features(x)
        self._ensure(x)
        n = n_samples or self.n_samples
        counts = np.zeros(len(self.arms))
        for row in self._sample_scores(x, self.rng_, n):
            counts[self._argmax(row)] += 1
        return {aid: counts[i] / n for i, aid in enumerate(self.arm_ids)}

    def _mix(self) -> float:
        n = len(self.arms)
        return 0.0 if n <= 1 else min(1.0, max(self.epsilon, self.epsilon_floor * n))

    def policy(self, x) -> dict[str, float]:
        freq = self.selection_frequencies(x)
        eps, n = self._mix(), len(self.arms)
        return {a: (1 - eps) * p + eps / n for a, p in freq.items()}

    def select(self, x) -> tuple[str, float]:
        x = check_features(x)
        self._ensure(x)
        eps = self._mix()
        if eps > 0 and self.rng_.random_sample() < eps:
            arm = self.arm_ids[self.rng_.randint(len(self.arms))]
        else:
            arm = self.sample_arm(x)
        return arm, self.policy(x)[arm]


def thompson_select(features, router: ThompsonRouter) -> tuple[str, float]:
    """Posterior-sampled arm and its Monte-Carlo selection frequency."""
    arm = router.sample_arm(features)
    return arm, router.selection_frequencies(features)[arm]


# -- off-policy evaluation ---------------------------------------------------

Policy = Union[str, Mapping[str, float], Callable[[Any, str], float]]


@dataclass(frozen=True)
class LoggedDecision:
    features: tuple[float, ...]
    arm: str
    propensity: float
    reward: float
    components: Mapping[str, float] = field(default_factory=dict)
    tokens: int = 0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LoggedDecision":
        return cls(
            tuple(d.get("features", ())),
            str(d["arm"]),
            float(d["propensity"]),
            float(d["reward"]),
            dict(d.get("reward_components", {})),
            int(d.get("tokens", 0)),
        )


def policy_prob(policy: Policy, features, arm: str) -> float:
    if isinstance(policy, str):
        return 1.0 if arm == policy else 0.0
    if isinstance(policy, Mapping):
        return float(policy.get(arm, 0.0))
    return float(policy(features, arm))


def _weights(logs: Sequence[LoggedDecision], target: Policy) -> tuple[np.ndarray, np.ndarray]:
    if not logs:
        raise EstimationError("no logged decisions")
    w, r = [], []
    for log in logs:
        if log.propensity <= 0:
            raise EstimationError(f"zero logged propensity for arm {log.arm!r}")
        w.append(policy_prob(target, log.features, log.arm) / log.propensity)
        r.append(log.reward)
    return np.array(w), np.array(r)


@dataclass(frozen=True)
class OPEResult:
    estimator: str
    estimate: float
    std_error: float
    n: int

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "estimate": self.estimate, "std_error": self.std_error, "n": self.n}


def _se(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0


def ips(logs: Sequence[LoggedDecision], target: Policy) -> OPEResult:
    """Inverse propensity scoring: mean of (pi_target / p_log) * r."""
    w, r = _weights(logs, target)
    vals = w * r
    return OPEResult("ips", float(vals.mean()), _se(vals), len(vals))


def snips(logs: Sequence[LoggedDecision], target: Policy) -> OPEResult:
    """Self-normalized IPS: sum(w r) / sum(w)."""
    w, r = _weights(logs, target)
    total = w.sum()
    if total <= 0:
        raise EstimationError("all importance weights are zero")
    est = float((w * r).sum() / total)
    # delta-method standard error
    resid = w * (r - est) / w.mean()
    return OPEResult("snips", est, _se(resid), len(w))


QModel = Union[Mapping[str, float], Callable[[Any, str], float]]


def _q(q_model: QModel, features, arm: str) -> float:
    if isinstance(q_model, Mapping):
        return float(q_model.get(arm, 0.0))
    return float(q_model(features, arm))


def doubly_robust(
    logs: Sequence[LoggedDecision], target: Policy, q_model: QModel, arms: Optional[Sequence[str]] = None
) -> OPEResult:
    """Model term under the target plus importance-weighted model residual."""
    w, r = _weights(logs, target)
    if arms is None:
        arms = sorted({l.arm for l in logs} | (set(target) if isinstance(target, Mapping) else set())
                      | ({target} if isinstance(target, str) else set()))
    vals = []
    for wi, ri, log in zip(w, r, logs):
        direct = sum(policy_prob(target, log.features, a) * _q(q_model, log.features, a) for a in arms)
        vals.append(direct + wi * (ri - _q(q_model, log.features, log.arm)))
    vals = np.array(vals)
    return OPEResult("dr", float(vals.mean()), _se(vals), len(vals))


def fit_q_model(logs: Sequence[LoggedDecision]) -> dict[str, float]:
    """Per-arm mean logged reward, a context-free reward model for DR."""
    sums: dict[str, list[float]] = {}
    for log in logs:
        sums.setdefault(log.arm, []).append(log.reward)
    return {a: float(np.mean(v)) for a, v in sorted(sums.items())}


ESTIMATORS = {"ips": ips, "snips": snips}
