"""Experiment grids for the efficiency, personalization, memory-load and
diversity hypotheses, plus cold-start and ablation studies.

Every condition is a set of config overrides applied to a base config; no
experiment adds code paths to the system itself.
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ..arbiter import diversify_err_ia
from ..config import Config
from ..context import SessionContext
from ..exceptions import ConfigError
from ..metrics import Judgment, err_ia_at_k, subtopic_coverage
from ..system import DEFAULT_PERSONAS, build_system
from .corpus import SyntheticCorpus
from .session import derive_seed, load_or_generate_corpus, make_query, run_simulation, simulate_session, write_csv
from .users import generate_users

EXPERIMENTS = ("protocol_cost", "routing_drift", "memory_load", "diversity", "coldstart", "ablation")


def _setup(cfg: Config, seed: int):
    corpus = load_or_generate_corpus(cfg, derive_seed(seed, 1))
    users = generate_users(cfg.sim.users, derive_seed(seed, 2), list(corpus.intents.values()), cfg.sim.success_min_grade)
    return corpus, users


def _fixture_queries(corpus: SyntheticCorpus, users, n: int, seed: int):
    rng = np.random.default_rng(seed)
    return [make_query(users[i % len(users)], corpus, rng, f"fx{i}", 0)[0] for i in range(n)]


# -- protocol cost ---------------------------------------------------------------

COST_CONDITIONS: dict[str, dict[str, dict[str, Any]]] = {
    "independent_k1": {"coordinator": {"force_protocol": "independent", "budget": 1000}},
    "independent_k2": {"coordinator": {"force_protocol": "independent", "budget": 2000}},
    "independent_k3": {"coordinator": {"force_protocol": "independent", "budget": 3000}},
    "debate_r1": {"coordinator": {"force_protocol": "debate", "budget": 3000, "r_max": 1, "theta": 0.0}},
    "debate_r2": {"coordinator": {"force_protocol": "debate", "budget": 3000, "r_max": 2, "theta": 0.0}},
}


def fixture_tokens(cfg: Config, corpus: SyntheticCorpus, queries) -> dict[str, float]:
    """Mean tokens, latency and agent count per query over a fixed query list."""
    system = build_system(cfg, corpus.documents)
    tokens, latency, agents, rounds = [], [], [], []
    for i, q in enumerate(queries):
        res = system.coordinator.handle_query(q, SessionContext(f"fixture{i}", "fixture"))
        tokens.append(res.log["tokens"])
        latency.append(res.log["latency_ms"])
        agents.append(len(res.log["personas"]))
        rounds.append(res.log["rounds"])
    return {
        "fixture_tokens": float(np.mean(tokens)),
        "fixture_latency_ms": float(np.mean(latency)),
        "agents": float(np.mean(agents)),
        "rounds": float(np.mean(rounds)),
    }


def protocol_cost(cfg: Config, seed: int) -> tuple[dict, list[dict]]:
    corpus, users = _setup(cfg, seed)
    queries = _fixture_queries(corpus, users, 20, derive_seed(seed, 10))
    rows = []
    for name, overrides in COST_CONDITIONS.items():
        c = cfg.replace(**overrides)
        row = {"condition": name, **fixture_tokens(c, corpus, queries)}
        s = run_simulation(c, seed, corpus=corpus).report
        for key in ("mean_reward", "mean_tokens_per_turn", "utility_per_token", "success_rate", "mean_latency_ms", "ndcg@5"):
            row[key] = s[key]
        rows.append(row)
    by = {r["condition"]: r["fixture_tokens"] for r in rows}
    checks = {
        "debate3_gt_independent3": by["debate_r2"] > by["independent_k3"],
        "independent3_gt_independent1": by["independent_k3"] > by["independent_k1"],
    }
    return {"checks": checks}, rows


# -- routing under preference drift --------------------------------------------

DRIFT_PERSONAS = DEFAULT_PERSONAS[:3] + [DEFAULT_PERSONAS[-1]]
DRIFT_MEANS = (0.8, 0.4, 0.1)


def routing_config(cfg: Config, routing: str) -> Config:
    """Three routable personas, one persona per turn, independent protocol."""
    cc = cfg.coordinator
    return cfg.replace(
        personas={"personas": DRIFT_PERSONAS},
        coordinator={"routing": routing, "force_protocol": "independent", "budget": cc.est_tokens_per_agent},
        learning={"arms": [], "alpha": 0.7, "discount": 0.9},
    )


def run_routing_drift(
    cfg: Config,
    seed: int,
    routing: str,
    n_turns: int = 500,
    swap_at: Optional[int] = None,
    means: Sequence[float] = DRIFT_MEANS,
    noise: float = 0.1,
    session_len: int = 5,
    corpus: SyntheticCorpus | None = None,
) -> dict[str, Any]:
    """Route ``n_turns`` queries with a synthetic per-persona reward.

    Persona ``i`` (in registry order) pays ``means[i]`` plus Gaussian noise.
    At ``swap_at`` the best and worst personas exchange their means.
    """
    cfg = routing_config(cfg, routing).replace(coordinator={"seed": derive_seed(seed, 0)})
    if corpus is None:
        corpus = load_or_generate_corpus(cfg, derive_seed(seed, 1))
    users = generate_users(cfg.sim.users, derive_seed(seed, 2), list(corpus.intents.values()))
    system = build_system(cfg, corpus.documents)
    ids = system.registry.routable_ids()
    if len(ids) != len(means):
        raise ConfigError("one reward mean per routable persona is required")
    rng = np.random.default_rng(derive_seed(seed, 4))
    mu = dict(zip(ids, means))
    chosen, best, rewards, sessions = [], [], [], []
    ctx = None
    for t in range(n_turns):
        if swap_at is not None and t == swap_at:
            hi, lo = max(mu, key=mu.get), min(mu, key=mu.get)
            mu[hi], mu[lo] = mu[lo], mu[hi]
        s = t // session_len
        if t % session_len == 0:
            if ctx is not None:
                system.memory.end_session(ctx.session_id)
            user = users[s % len(users)]
            ctx = SessionContext(f"drift{s:04d}", user.user_id)
        query, _ = make_query(user, corpus, rng, f"t{t}", ctx.turn_index)
        res = system.coordinator.handle_query(query, ctx)
        pid = res.log["personas"][0]
        reward = float(np.clip(mu[pid] + noise * rng.standard_normal(), -1.0, 1.0))
        system.coordinator.feedback(res, reward)
        chosen.append(pid)
        best.append(max(mu, key=mu.get))
        rewards.append(reward)
        sessions.append(s)
        ctx = ctx.advance(query)
    hits = np.array([c == b for c, b in zip(chosen, best)], dtype=float)
    session_reward = [sum(r for r, s2 in zip(rewards, sessions) if s2 == s) for s in sorted(set(sessions))]
    out = {
        "routing": routing,
        "n_turns": n_turns,
        "best_rate_last100": float(hits[-100:].mean()),
        "mean_reward": float(np.mean(rewards)),
        "mean_session_reward": float(np.mean(session_reward)),
        "hits": hits.tolist(),
    }
    if swap_at is not None:
        out["swap_at"] = swap_at
        out["recovery_turns"] = recovery_turns(hits, swap_at)
    return out


def recovery_turns(hits: Sequence[float], swap_at: int, window: int = 20, target: float = 0.7) -> Optional[int]:
    """Turns after the swap until the trailing ``window`` best-arm rate reaches ``target``."""
    hits = np.asarray(hits, dtype=float)
    for end in range(swap_at + window, len(hits) + 1):
        if hits[end - window : end].mean() >= target:
            return end - swap_at
    return None


def routing_drift(cfg: Config, seed: int) -> tuple[dict, list[dict]]:
    corpus = load_or_generate_corpus(cfg, derive_seed(seed, 1))
    rows = []
    for routing in ("linucb", "uniform", "thompson"):
        for swap in (None, 250):
            r = run_routing_drift(cfg, seed, routing, swap_at=swap, corpus=corpus)
            r.pop("hits")
            rows.append({"condition": f"{routing}{'_swap' if swap else ''}", **r})
    by = {r["condition"]: r for r in rows}
    rec = by["linucb_swap"]["recovery_turns"]
    checks = {
        "linucb_best_rate_gt_0.8": by["linucb"]["best_rate_last100"] > 0.8,
        "linucb_beats_uniform": by["linucb"]["mean_session_reward"] > by["uniform"]["mean_session_reward"],
        "linucb_recovers_within_50": rec is not None and rec <= 50,
    }
    return {"checks": checks}, rows


# -- context growth ------------------------------------------------------------


def context_series(cfg: Config, seed: int, n_turns: int = 200) -> tuple[list[int], int]:
    """Per-turn largest agent input over one long session, and the capped bound."""
    corpus, users = _setup(cfg, seed)
    system = build_system(cfg, corpus.documents)
    rng = np.random.default_rng(derive_seed(seed, 5))
    user = users[0]
    ctx = SessionContext("long", user.user_id)
    sizes = []
    for t in range(n_turns):
        query, _ = make_query(user, corpus, rng, f"t{t}", ctx.turn_index)
        res = system.coordinator.handle_query(query, ctx)
        sizes.append(max(res.log["context_sizes"], default=0))
        ctx = ctx.advance(query)
    return sizes, system.memory.context_bound(cfg.memory.retrieve_limit)


def memory_load(cfg: Config, seed: int, n_turns: int = 200) -> tuple[dict, list[dict]]:
    on, bound = context_series(cfg.replace(memory={"separation": True}), seed, n_turns)
    off, _ = context_series(cfg.replace(memory={"separation": False}), seed, n_turns)
    rows = [{"turn": t + 1, "separated": a, "unseparated": b, "bound": bound} for t, (a, b) in enumerate(zip(on, off))]
    checks = {
        "separated_within_bound": all(s <= bound for s in on),
        "unseparated_exceeds_bound_at_end": off[-1] > bound,
    }
    summary = {"bound": bound, "max_separated": max(on), "final_unseparated": off[-1], "checks": checks}
    return summary, rows


# -- diversity -----------------------------------------------------------------


def diversity_fixture() -> tuple[list[str], dict[str, float], dict[str, dict[str, int]]]:
    """Six candidates in relevance order; five serve intent A, one serves B."""
    candidates = ["a1", "a2", "a3", "a4", "a5", "b1"]
    grades = {
        "a1": {"A": 4},
        "a2": {"A": 4},
        "a3": {"A": 3},
        "a4": {"A": 3},
        "a5": {"A": 2},
        "b1": {"B": 4},
    }
    return candidates, {"A": 0.7, "B": 0.3}, grades


def best_permutation(candidates, intent_dist, grades, k: int, g_max: int = 4) -> tuple[tuple[str, ...], float]:
    """Exhaustive search for the ERR-IA@k-optimal ordered k-subset."""
    judgment = Judgment(grades, intent_dist)
    best, value = None, -1.0
    for perm in itertools.permutations(candidates, k):
        v = err_ia_at_k(perm, judgment, k, g_max)
        if v > value + 1e-15:
            best, value = perm, v
    return best, value


def diversity(cfg: Config, seed: int, k: int = 5) -> tuple[dict, list[dict]]:
    candidates, dist, grades = diversity_fixture()
    judgment = Judgment(grades, dist)
    g_max = cfg.retrieval.g_max
    relevance = candidates[:k]
    greedy = diversify_err_ia(candidates, dist, grades, k, g_max).doc_ids
    _, optimum = best_permutation(candidates, dist, grades, k, g_max)
    rows = []
    for name, ranking in (("relevance_only", relevance), ("err_ia_greedy", greedy)):
        rows.append(
            {
                "condition": name,
                "source": "fixture",
                "ranking": " ".join(ranking),
                "err_ia@5": err_ia_at_k(ranking, judgment, k, g_max),
                "subtopic_coverage@5": subtopic_coverage(ranking, judgment, k),
            }
        )
    for flag in (False, True):
        s = run_simulation(cfg.replace(arbiter={"diversify": flag}), seed).report
        rows.append(
            {
                "condition": "sim_diversified" if flag else "sim_relevance_only",
                "source": "simulation",
                "err_ia@5": s["err_ia@5"],
                "ndcg@5": s["ndcg@5"],
                "success_rate": s["success_rate"],
            }
        )
    rel, grd = rows[0], rows[1]
    checks = {
        "greedy_higher_err_ia": grd["err_ia@5"] > rel["err_ia@5"],
        "greedy_higher_coverage": grd["subtopic_coverage@5"] > rel["subtopic_coverage@5"],
        "greedy_optimal": abs(grd["err_ia@5"] - optimum) <= 1e-12,
    }
    return {"optimum": optimum, "checks": checks}, rows


# -- cold start ----------------------------------------------------------------


def turns_to_parity(cold: Sequence[float], warm_mean: float, window: int = 100, min_periods: int = 10, ratio: float = 0.95):
    """First turn at which the trailing mean reward reaches ``ratio`` of the warm mean."""
    cold = np.asarray(cold, dtype=float)
    for t in range(min_periods, len(cold) + 1):
        if cold[max(0, t - window) : t].mean() >= ratio * warm_mean:
            return t
    return None


def coldstart(cfg: Config, seed: int, warmup_sessions: int = 10, eval_sessions: int = 30) -> tuple[dict, list[dict]]:
    cfg = cfg.replace(coordinator={"routing": cfg.coordinator.routing if cfg.coordinator.routing != "static" else "linucb"})
    corpus, users = _setup(cfg, seed)

    def run(system, first: int, n: int) -> list[float]:
        rewards = []
        for s in range(first, first + n):
            for ui, user in enumerate(users):
                log = simulate_session(
                    user, system, corpus, cfg.sim.max_turns, derive_seed(seed, 3, s, ui), f"s{s:03d}-{user.user_id}"
                )
                rewards += [t["reward"] for t in log.turns if not t.get("failed")]
        return rewards

    c = cfg.replace(coordinator={"seed": derive_seed(seed, 0)})
    warm_system = build_system(c, corpus.documents)
    run(warm_system, 0, warmup_sessions)
    warm = run(warm_system, warmup_sessions, eval_sessions)
    cold = run(build_system(c, corpus.documents), warmup_sessions, eval_sessions)
    warm_mean = float(np.mean(warm))
    parity = turns_to_parity(cold, warm_mean)
    rows = [
        {"condition": "warm", "turns": len(warm), "mean_reward": warm_mean, "turns_to_parity": 0},
        {"condition": "cold", "turns": len(cold), "mean_reward": float(np.mean(cold)), "turns_to_parity": parity},
    ]
    return {"warm_mean": warm_mean, "turns_to_parity": parity}, rows


# -- ablations -----------------------------------------------------------------

ABLATIONS: dict[str, dict[str, dict[str, Any]]] = {
    "full": {},
    "no_episodic_memory": {"memory": {"episodic": False}},
    "no_debate": {"coordinator": {"allow_debate": False}},
    "learned_fusion": {"arbiter": {"fusion": "weighted"}},
    "no_exploration": {"learning": {"epsilon": 0.0, "epsilon_floor": 0.0}},
    "no_diversity": {"arbiter": {"diversify": False}},
}


def ablation(cfg: Config, seed: int) -> tuple[dict, list[dict]]:
    base = cfg.replace(coordinator={"routing": "linucb"}) if cfg.coordinator.routing == "static" else cfg
    rows = []
    for name, overrides in ABLATIONS.items():
        s = run_simulation(base.replace(**overrides), seed).report
        rows.append({"condition": name, **{k: v for k, v in s.items() if not isinstance(v, dict)}})
    return {"routing": base.coordinator.routing}, rows


RUNNERS: dict[str, Callable[[Config, int], tuple[dict, list[dict]]]] = {
    "protocol_cost": protocol_cost,
    "routing_drift": routing_drift,
    "memory_load": memory_load,
    "diversity": diversity,
    "coldstart": coldstart,
    "ablation": ablation,
}


def run_experiment(kind: str, cfg: Config | None = None, seed: int = 0, out_dir: str | Path | None = None) -> dict:
    """Run one experiment grid; writes ``report.json`` and ``summary.csv`` when ``out_dir`` is given."""
    if kind not in RUNNERS:
        raise ConfigError(f"unknown experiment {kind!r}; expected one of {list(EXPERIMENTS)}")
    cfg = cfg or Config()
    summary, rows = RUNNERS[kind](cfg, seed)
    report = {"experiment": kind, "seed": seed, **summary, "conditions": rows}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        write_csv(out / "summary.csv", rows)
    return report
