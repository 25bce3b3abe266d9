"""Multi-seed comparison of the four policies.

Each training seed gets its own 100-episode DQN run.  All policies are then
scored on the same evaluation episodes (``eval_seed``), so the random and
rule-based baselines, which do not depend on training, are evaluated once.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .dqn import save_checkpoint
from .policies import PolicySpec, evaluate_policy
from .training import train_dqn

CHANGE_RATIO = 0.3


@dataclass
class SeedResult:
    seed: int
    train_seconds: float
    dqn: dict
    rule_based_dqn: dict
    checks: dict = field(default_factory=dict)


def directional_checks(rule_dqn: dict, rule: dict, random: dict, dqn: dict) -> dict:
    """The three orderings that should hold for one training seed."""
    return {
        "speed": rule_dqn["avg_speed"] >= rule["avg_speed"],
        "changes": rule_dqn["avg_changes"] <= CHANGE_RATIO * random["avg_changes"],
        "safety": rule_dqn["safety_rate"] >= dqn["safety_rate"],
    }


def _summary(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "per_episode"}


def run_comparison(
    seeds=(0, 1, 2, 3, 4),
    config: RunConfig = RunConfig(),
    eval_seed: int = 2024,
    out_dir: str | Path | None = None,
    log=print,
) -> dict:
    """Train one agent per seed and score all four policies on shared evaluation episodes."""
    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    n_eval = config.eval_episodes
    started = time.perf_counter()
    baselines = {}
    for kind in ("random", "rule_based"):
        spec = PolicySpec(kind)
        baselines[kind] = evaluate_policy(spec, n_eval, eval_seed, config.env_config(spec.shield_enabled))
        log(f"{kind}: v={baselines[kind]['avg_speed']:.2f} changes={baselines[kind]['avg_changes']:.1f} "
            f"safety={baselines[kind]['safety_rate']:.1f}")

    results = []
    for seed in seeds:
        t0 = time.perf_counter()
        run = train_dqn(config.episodes, seed, config.env_config(True), config.train, config.epsilon)
        train_seconds = time.perf_counter() - t0
        ckpt = (out / f"seed{seed}.lsrl") if out is not None else Path(f".seed{seed}.lsrl")
        save_checkpoint(run.agent.net, run.agent.schedule, ckpt)
        reports = {}
        for kind in ("dqn", "rule_based_dqn"):
            spec = PolicySpec(kind, checkpoint=str(ckpt))
            reports[kind] = evaluate_policy(spec, n_eval, eval_seed, config.env_config(spec.shield_enabled))
        if out is None:
            ckpt.unlink()
        res = SeedResult(seed, train_seconds, reports["dqn"], reports["rule_based_dqn"])
        res.checks = directional_checks(res.rule_based_dqn, baselines["rule_based"], baselines["random"], res.dqn)
        results.append(res)
        r, d = res.rule_based_dqn, res.dqn
        log(f"seed {seed}: train {train_seconds:.0f}s  rule-dqn v={r['avg_speed']:.2f} changes={r['avg_changes']:.1f} "
            f"safety={r['safety_rate']:.1f}  dqn v={d['avg_speed']:.2f} safety={d['safety_rate']:.1f}  {res.checks}")

    summary = {
        "eval_seed": eval_seed,
        "eval_episodes": n_eval,
        "training_episodes": config.episodes,
        "baselines": {k: _summary(v) for k, v in baselines.items()},
        "seeds": [
            {"seed": r.seed, "train_seconds": r.train_seconds, "checks": r.checks,
             "dqn": _summary(r.dqn), "rule_based_dqn": _summary(r.rule_based_dqn)}
            for r in results
        ],
        "holds": {k: sum(r.checks[k] for r in results) for k in ("speed", "changes", "safety")},
        "total_seconds": time.perf_counter() - started,
    }
    if out is not None:
        (out / "comparison.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
