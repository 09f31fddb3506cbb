"""mIoU, forwards per task and wall time for K in {1, 5, 20} under both K-shot strategies.

    python3 scripts/shot_sweep.py --data data [--checkpoint runs/aad/model.ckpt]
"""

import argparse
import logging

from aadfss.config import RunConfig
from aadfss.experiments import ensure_dataset, shot_sweep
from aadfss.trainer import load_checkpoint, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", default="data")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--checkpoint", help="trained model; trains a default one when omitted")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--tasks", type=int, default=200)
    p.add_argument("--runs", type=int, default=2)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = RunConfig(seed=args.seed, episodes_total=args.episodes, data_root=args.data)
    index = ensure_dataset(args.data, args.seed)
    model = load_checkpoint(args.checkpoint, config).model if args.checkpoint else train(config, index).model
    print(f"{'strategy':8s} {'K':>3s} {'mIoU':>7s} {'fwd/task':>9s} {'wall s':>8s}")
    for strategy in ("average", "vote"):
        for K, rep in shot_sweep(model, index, strategy=strategy, tasks=args.tasks, runs=args.runs,
                                 base_seed=args.seed).items():
            print(f"{strategy:8s} {K:3d} {100 * rep.miou:7.2f} {rep.forwards_per_task:9g} {rep.wall_time_s:8.1f}")


if __name__ == "__main__":
    main()
