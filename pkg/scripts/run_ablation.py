"""Train every ablation arm on one budget and print mIoU at K=1 and K=5.

    python3 scripts/run_ablation.py --data data --episodes 2000
"""

import argparse
import logging

from aadfss.config import RunConfig
from aadfss.experiments import ARMS, ablation, ensure_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", default="data")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--tasks", type=int, default=200)
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--arms", default="baseline,cl,aad", help=f"comma list from {sorted(ARMS)}")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = RunConfig(seed=args.seed, episodes_total=args.episodes, data_root=args.data)
    index = ensure_dataset(args.data, args.seed)
    table = ablation(config, index, args.arms.split(","), ks=(1, 5), tasks=args.tasks, runs=args.runs)
    print(f"{'arm':9s} {'K=1':>7s} {'K=5':>7s}")
    for arm, row in table.items():
        print(f"{arm:9s} {100 * row[1]:7.2f} {100 * row[5]:7.2f}")


if __name__ == "__main__":
    main()
