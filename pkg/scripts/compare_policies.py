"""Train one agent per seed and compare all four policies on shared evaluation episodes.

    python3 scripts/compare_policies.py --seeds 0 1 2 3 4 --out runs/comparison
"""
import argparse

from lanerl.config import load_config
from lanerl.experiment import run_comparison


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--episodes", type=int, help="training episodes per seed")
    parser.add_argument("--eval-seed", type=int, default=2024)
    parser.add_argument("--out", default="runs/comparison")
    args = parser.parse_args()
    cfg = load_config(args.config, episodes=args.episodes)
    summary = run_comparison(args.seeds, cfg, args.eval_seed, args.out, log=lambda m: print(m, flush=True))
    n = len(args.seeds)
    for k, held in summary["holds"].items():
        print(f"{k}: holds in {held}/{n} seeds")
    print(f"total {summary['total_seconds'] / 60:.1f} min")


if __name__ == "__main__":
    main()
