"""Train the AAD arm with N in {5, 15, 30} queries; report K=1 mIoU and MACs per forward.

    python3 scripts/query_count_sweep.py --data data
"""

import argparse
import logging

from aadfss.config import RunConfig
from aadfss.experiments import ensure_dataset, query_count_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", default="data")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--tasks", type=int, default=200)
    p.add_argument("--runs", type=int, default=2)
    p.add_argument("--counts", default="5,15,30")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = RunConfig(seed=args.seed, episodes_total=args.episodes, data_root=args.data)
    index = ensure_dataset(args.data, args.seed)
    counts = tuple(int(n) for n in args.counts.split(","))
    res = query_count_sweep(config, index, counts, tasks=args.tasks, runs=args.runs)
    base = res[counts[0]][1]
    print(f"{'N':>3s} {'mIoU':>7s} {'MACs':>10s} {'vs first':>9s}")
    for N, (miou, macs) in res.items():
        print(f"{N:3d} {100 * miou:7.2f} {macs:10d} {macs / base - 1:+9.1%}")


if __name__ == "__main__":
    main()
