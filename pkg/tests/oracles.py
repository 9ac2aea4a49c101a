"""Brute-force reference implementations, written independently of the package."""
import math

import numpy as np


def rrf(lists, k0=60.0, weights=None):
    weights = weights or [1.0] * len(lists)
    docs = sorted({d for lst in lists for d in lst})
    scores = {}
    for d in docs:
        scores[d] = sum(w / (k0 + lst.index(d) + 1) for lst, w in zip(lists, weights) if d in lst)
    order = sorted(docs, key=lambda d: (-scores[d], d))
    return order, scores


def stop_prob(g, g_max=4):
    return (2**g - 1) / 2**g_max


def err(ranking, grades, k, g_max=4):
    ranking = list(ranking)[:k]
    total = 0.0
    for r in range(1, len(ranking) + 1):
        before = np.prod([1 - stop_prob(grades.get(d, 0), g_max) for d in ranking[: r - 1]])
        total += before * stop_prob(grades.get(ranking[r - 1], 0), g_max) / r
    return float(total)


def err_ia(ranking, grades_by_doc, dist, k, g_max=4):
    return sum(p * err(ranking, {d: g.get(t, 0) for d, g in grades_by_doc.items()}, k, g_max) for t, p in dist.items())


def ndcg(ranking, grades, k):
    gains = np.array([2 ** grades.get(d, 0) - 1 for d in list(ranking)[:k]], dtype=float)
    disc = 1 / np.log2(np.arange(2, len(gains) + 2))
    ideal = np.sort(np.array([2**g - 1 for g in grades.values()], dtype=float))[::-1][:k]
    idcg = float(ideal @ (1 / np.log2(np.arange(2, len(ideal) + 2))))
    return float(gains @ disc) / idcg if idcg > 0 else 0.0


def coverage(ranking, grades_by_doc, dist, k):
    intents = {t for t, p in dist.items() if p > 0}
    top = list(ranking)[:k]
    if not top or not intents:
        return 0.0
    hit = {t for d in top for t, g in grades_by_doc.get(d, {}).items() if g > 0 and t in intents}
    return len(hit) / len(intents)


def random_instance(rng, n_docs=8, n_intents=3):
    docs = [f"d{i}" for i in range(n_docs)]
    intents = [f"t{j}" for j in range(n_intents)]
    grades = {d: {t: int(rng.integers(0, 5)) for t in intents if rng.random() < 0.7} for d in docs}
    p = rng.dirichlet(np.ones(n_intents))
    dist = dict(zip(intents, p / p.sum()))
    ranking = list(rng.permutation(docs))
    return ranking, grades, dist


def softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]
