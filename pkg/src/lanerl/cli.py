"""``lanerl train | eval | demo``.

Exit codes: 0 success, 2 bad configuration, 3 I/O failure, 4 missing artifact.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dqn import save_checkpoint
from .env import HighwayEnv, transition_record
from .errors import CheckpointFormatError, ConfigError, InvalidArgument
from .policies import PolicySpec, episode_seeds, evaluate_policy, make_chooser, run_episode, write_report
from .training import train_dqn

log = logging.getLogger("lanerl")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISSING = 0, 2, 3, 4
POLICY_FLAGS = {"random": "random", "rule": "rule_based", "dqn": "dqn", "rule-dqn": "rule_based_dqn"}
CSV_COLUMNS = ("episode", "avg_speed", "lane_changes", "collided", "steps", "cumulative_reward")
CHECKPOINT_NAME = "checkpoint.lsrl"


class MissingArtifact(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanerl", description="Highway lane-change DQN: train, evaluate, demo.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train the DQN agent; writes train.csv and a checkpoint"),
        ("eval", "evaluate policies; writes report.json and report.txt"),
        ("demo", "run one episode; writes demo.jsonl"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--episodes", type=int, help="training episodes (train) or evaluation episodes (eval)")
        p.add_argument("--policy", choices=sorted(POLICY_FLAGS), help="eval: a single policy (default: all four)")
        p.add_argument("--checkpoint", help=f"checkpoint file (default: OUT/{CHECKPOINT_NAME})")
        p.add_argument("--shield", choices=("on", "off"), help="override the policy's default shield setting")
        p.add_argument("--out", help="output directory (default: log_dir from the config)")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.log_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _shield(args):
    return None if args.shield is None else args.shield == "on"


def _checkpoint(args, out: Path) -> str:
    path = Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT_NAME
    if not path.is_file():
        raise MissingArtifact(f"checkpoint not found: {path}")
    return str(path)


def _spec(kind, args, out) -> PolicySpec:
    spec = PolicySpec(kind, shield_enabled=_shield(args))
    if spec.needs_checkpoint:
        spec = PolicySpec(kind, shield_enabled=spec.shield_enabled, checkpoint=_checkpoint(args, out))
    return spec


def cmd_train(args, cfg) -> int:
    out = _out_dir(args, cfg)
    shield_on = _shield(args)
    env_cfg = cfg.env_config(True if shield_on is None else shield_on)
    with open(out / "train.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()

        def on_episode(m):
            row = {k: v for k, v in asdict(m).items() if k in CSV_COLUMNS}
            row["avg_speed"] = f"{m.avg_speed:.6f}"
            row["cumulative_reward"] = f"{m.cumulative_reward:.6f}"
            row["collided"] = int(m.collided)
            writer.writerow(row)
            fh.flush()
            log.info("episode %d  v=%.2f MPH  changes=%d  collided=%s  steps=%d",
                     m.episode, m.avg_speed, m.lane_changes, m.collided, m.steps)

        run = train_dqn(cfg.episodes, cfg.seed, env_cfg, cfg.train, cfg.epsilon, on_episode=on_episode)
    save_checkpoint(run.agent.net, run.agent.schedule, out / CHECKPOINT_NAME)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info("wrote %s and %s", out / "train.csv", out / CHECKPOINT_NAME)
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    out = _out_dir(args, cfg)
    kinds = [POLICY_FLAGS[args.policy]] if args.policy else list(POLICY_FLAGS.values())
    n = args.episodes if args.episodes is not None else cfg.eval_episodes
    if n < 1:
        raise ConfigError("episodes: must be >= 1")
    specs = [_spec(kind, args, out) for kind in kinds]
    reports = []
    for spec in specs:
        reports.append(evaluate_policy(spec, n, cfg.seed, cfg.env_config(spec.shield_enabled)))
        r = reports[-1]
        log.info("%s: v=%.2f MPH  changes=%.2f  safety=%.2f", spec.kind, r["avg_speed"], r["avg_changes"], r["safety_rate"])
    write_report(reports, out)
    return EXIT_OK


def cmd_demo(args, cfg) -> int:
    out = _out_dir(args, cfg)
    spec = _spec(POLICY_FLAGS[args.policy or "rule"], args, out)
    env = HighwayEnv(cfg.env_config(spec.shield_enabled))
    choose = make_chooser(spec, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDE30])))
    with open(out / "demo.jsonl", "w") as fh:
        def on_step(action, res, grid, aux):
            fh.write(json.dumps(transition_record(res, action), sort_keys=True) + "\n")

        m = run_episode(env, episode_seeds(cfg.seed, 1)[0], choose, on_step=on_step)
    log.info("demo: %d decisions, v=%.2f MPH, changes=%d, collided=%s", m.steps, m.avg_speed, m.lane_changes, m.collided)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "demo": cmd_demo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    from .config import load_config

    try:
        overrides = {"seed": args.seed}
        if args.command == "train":
            overrides["episodes"] = args.episodes
        cfg = load_config(args.config, **overrides)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InvalidArgument) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (MissingArtifact, CheckpointFormatError) as exc:
        log.error("missing artifact: %s", exc)
        return EXIT_MISSING
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
