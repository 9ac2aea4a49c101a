"""Command-line entry point: ``persona-search <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .config import load_config
from .exceptions import PersonaSearchError
from .learning import LinUCBRouter, LoggedDecision, doubly_robust, fit_q_model, ips, snips
from .metrics import Judgment, err_at_k, err_ia_at_k, ndcg_at_k, subtopic_coverage, utility_per_token
from .retrieval import Index, load_corpus

log = logging.getLogger("persona_search")

METRICS = ("ndcg", "err", "err_ia", "coverage", "utility_per_token")


def _print(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_index(args) -> int:
    cfg = load_config(args.config)
    docs = load_corpus(args.corpus, cfg.retrieval.g_max)
    index = Index(docs, cfg.retrieval.k1, cfg.retrieval.b)
    stats = index.stats()
    if args.out:
        Path(args.out).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    _print(stats)
    return 0


def cmd_simulate(args) -> int:
    from .sim.session import run_simulation

    cfg = load_config(args.config)
    result = run_simulation(cfg, args.seed, args.out)
    log.info("wrote %d sessions to %s", len(result.sessions), args.out)
    _print(result.report)
    return 0


def _read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def evaluate_logs(log_dir: str | Path, metric: str, k: int, g_max: int = 4) -> dict:
    """Metric report ``{metric, k, mean, std, n}`` over every logged turn (or session)."""
    if metric not in METRICS:
        raise PersonaSearchError(f"unknown metric {metric!r}; expected one of {list(METRICS)}")
    log_dir = Path(log_dir)
    sessions = _read_jsonl(log_dir / "sessions.jsonl")
    if metric == "utility_per_token":
        values = []
        for s in sessions:
            turns = [t for t in s["turns"] if not t.get("failed")]
            if sum(t["tokens"] for t in turns) > 0:
                values.append(utility_per_token(turns))
    else:
        grades = {d.doc_id: dict(d.intent_grades) for d in load_corpus(log_dir / "corpus.jsonl", g_max)}
        users = {u["user_id"]: u for u in _read_jsonl(log_dir / "users.jsonl")}
        values = []
        for s in sessions:
            user = users[s["user_id"]]
            judgment = Judgment(grades, {i: p for i, p in user["intent_profile"]})
            dominant = user["success_condition"][0]
            for t in s["turns"]:
                if t.get("failed"):
                    continue
                shown = t["shown"]
                if metric == "ndcg":
                    values.append(ndcg_at_k(shown, judgment.for_intent(dominant), k))
                elif metric == "err":
                    values.append(err_at_k(shown, judgment.for_intent(dominant), k, g_max))
                elif metric == "err_ia":
                    values.append(err_ia_at_k(shown, judgment, k, g_max))
                else:
                    values.append(subtopic_coverage(shown, judgment, k))
    arr = np.asarray(values, dtype=float)
    return {
        "metric": metric,
        "k": k,
        "mean": float(arr.mean()) if len(arr) else 0.0,
        "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
        "n": int(len(arr)),
    }


def cmd_eval(args) -> int:
    _print(evaluate_logs(args.logs, args.metric, args.k))
    return 0


def load_target(spec: dict, logs: Sequence[LoggedDecision]):
    """Build a target policy from a spec file.

    Supported ``policy`` kinds: ``arm`` (always one arm), ``fixed`` (explicit
    probabilities), ``uniform`` (over logged arms) and ``linucb`` (a router
    refit on the logs, evaluated with its own exploration).
    """
    kind = spec.get("policy")
    arms = sorted({l.arm for l in logs})
    if kind == "arm":
        return str(spec["arm"])
    if kind == "fixed":
        return {str(a): float(p) for a, p in spec["probs"].items()}
    if kind == "uniform":
        return {a: 1.0 / len(arms) for a in arms}
    if kind == "linucb":
        router = LinUCBRouter(
            arms,
            alpha=float(spec.get("alpha", 0.5)),
            epsilon=float(spec.get("epsilon", 0.05)),
            epsilon_floor=float(spec.get("epsilon_floor", 0.05)),
        )
        router.fit(np.array([l.features for l in logs]), [l.arm for l in logs], [l.reward for l in logs])
        return lambda x, arm: router.policy(np.asarray(x))[arm]
    raise PersonaSearchError(f"unknown target policy kind {kind!r}")


def cmd_ope(args) -> int:
    logs = [LoggedDecision.from_dict(d) for d in _read_jsonl(Path(args.logs) / "decisions.jsonl")]
    spec = yaml.safe_load(Path(args.target).read_text()) or {}
    target = load_target(spec, logs)
    if args.estimator == "ips":
        res = ips(logs, target)
    elif args.estimator == "snips":
        res = snips(logs, target)
    else:
        arms = sorted({l.arm for l in logs})
        res = doubly_robust(logs, target, fit_q_model(logs), arms)
    _print(res.to_dict())
    return 0


def cmd_ablate(args) -> int:
    from .sim.experiments import run_experiment

    cfg = load_config(args.config)
    report = run_experiment(args.experiment, cfg, args.seed, args.out)
    _print({k: v for k, v in report.items() if k != "conditions"})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="persona-search", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", help="build a BM25 index over a JSONL corpus and print its stats")
    s.add_argument("--corpus", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", default=None, help="optional path for the stats JSON")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("simulate", help="run simulated sessions and write logs and reports")
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("eval", help="compute a ranking metric over simulation logs")
    s.add_argument("--logs", required=True)
    s.add_argument("--metric", required=True, choices=METRICS)
    s.add_argument("--k", type=int, default=5)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ope", help="off-policy estimate of a target policy from decision logs")
    s.add_argument("--logs", required=True)
    s.add_argument("--target", required=True, help="YAML/JSON target policy spec")
    s.add_argument("--estimator", required=True, choices=("ips", "snips", "dr"))
    s.set_defaults(func=cmd_ope)

    s = sub.add_parser("ablate", help="run an experiment grid")
    s.add_argument("--experiment", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PersonaSearchError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
