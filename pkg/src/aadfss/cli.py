"""Command-line entry point: ``aadfss {gen-data,train,eval,ablate,grad-check}``.

Configuration is a flat JSON object mirroring :class:`RunConfig`; flags
override file values and the merged result is written as ``config.json``
next to every run's outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .aad import VARIANTS, ConfigurationError
from .config import RunConfig
from .dataset import DatasetError, GenConfig, PNMFormatError, generate_dataset, load_manifest
from .evaluator import STRATEGIES, run_protocol
from .experiments import ARMS
from .tensor import NonFiniteError, ShapeError
from .trainer import TrainingError, load_checkpoint, train

log = logging.getLogger("aadfss")

CONTRACT_ERRORS = (ConfigurationError, DatasetError, PNMFormatError, ckpt.CheckpointError,
                   TrainingError, ShapeError, NonFiniteError, FileNotFoundError)


FLAG_KEYS = {"seed": "seed", "out": "out", "k": "k", "strategy": "strategy", "fusion": "fusion",
             "tasks": "tasks", "runs": "runs", "episodes": "episodes_total", "data": "data_root",
             "checkpoint": "checkpoint"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with RunConfig keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset root (overrides data_root)")
    common.add_argument("--k", type=int, help="shots at evaluation")
    common.add_argument("--strategy", choices=STRATEGIES)
    common.add_argument("--fusion", choices=VARIANTS)
    common.add_argument("--tasks", type=int)
    common.add_argument("--runs", type=int)
    common.add_argument("--episodes", type=int, help="training episodes")
    common.add_argument("--checkpoint", help="checkpoint path; relative paths resolve under --out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aadfss", description="Few-shot segmentation with adaptive attention distillation.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic benchmark to --out (or data_root)")
    sub.add_parser("train", parents=[common], help="episodic training; writes loss.csv and a checkpoint")
    sub.add_parser("eval", parents=[common], help="run the evaluation protocol on the test split")
    sub.add_parser("ablate", parents=[common], help="train and evaluate baseline, cl, aad and one fusion variant")
    sub.add_parser("grad-check", parents=[common], help="finite-difference suite over ops and the full model")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            base[key] = value
    return RunConfig.from_dict(base).validate()


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(config: RunConfig) -> Path:
    p = Path(config.checkpoint)
    return p if p.is_absolute() else Path(config.out) / p


def cmd_gen_data(config: RunConfig, args) -> int:
    root = Path(args.out) if args.out else Path(config.data_root)
    gen = GenConfig.from_dict({"size": config.image_size, **config.extra.get("gen", {})})
    index = generate_dataset(gen, config.seed, root)
    config.replace(data_root=str(root), out=str(root)).snapshot(root / "config.json")
    n = sum(1 for s in ("train", "test") for _ in index.samples(s))
    print(f"wrote {n} samples ({len(index.classes('train'))} base / {len(index.classes('test'))} novel classes) to {root}")
    return 0


def _train_one(config: RunConfig, index, out: Path):
    config.snapshot(out / "config.json")
    path = _checkpoint_path(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    res = train(config, index, log_path=out / "loss.csv", checkpoint_path=path)
    return res, path


def cmd_train(config: RunConfig, args) -> int:
    out = _out_dir(config)
    res, path = _train_one(config, load_manifest(config.data_root, **config.data_limits), out)
    tail = res.losses[-50:]
    print(f"trained {res.episode} episodes; final 50-episode loss {sum(tail) / max(1, len(tail)):.4f}; checkpoint {path}")
    return 0


def _evaluate(model, index, config: RunConfig, out: Path, stem: str = "metrics"):
    rep = run_protocol(model, index, config.k, config.strategy, tasks=config.tasks, runs=config.runs,
                       base_seed=config.seed, per_task_mean=config.per_task_mean)
    rep.write(out, stem)
    return rep


def cmd_eval(config: RunConfig, args) -> int:
    out = _out_dir(config)
    config.snapshot(out / "config.json")
    model = load_checkpoint(_checkpoint_path(config), config).model
    rep = _evaluate(model, load_manifest(config.data_root, **config.data_limits), config, out)
    print(f"K={rep.K} strategy={rep.strategy} mIoU={rep.miou:.4f} forwards/task={rep.forwards_per_task:g} "
          f"wall={rep.wall_time_s:.1f}s")
    return 0


def cmd_ablate(config: RunConfig, args) -> int:
    out = _out_dir(config)
    config.snapshot(out / "config.json")
    index = load_manifest(config.data_root, **config.data_limits)
    # the fourth arm is the fusion variant named by --fusion
    variant = config.fusion if config.fusion != "aad" else "maskadd"
    arms = {arm: ARMS[arm] for arm in ("baseline", "cl", "aad", variant)}
    rows = ["arm,K,strategy,miou,forwards_per_task"]
    for arm, overrides in arms.items():
        sub = out / arm
        sub.mkdir(exist_ok=True)
        cfg = config.replace(out=str(sub), checkpoint="model.ckpt", **overrides)
        res, _ = _train_one(cfg, index, sub)
        rep = _evaluate(res.model, index, cfg, sub)
        rows.append(f"{arm},{rep.K},{rep.strategy},{rep.miou!r},{rep.forwards_per_task!r}")
        print(f"{arm:9s} mIoU={rep.miou:.4f}")
    (out / "ablation.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


def cmd_grad_check(config: RunConfig, args) -> int:
    from .gradcheck import run_suite

    out = _out_dir(config)
    config.snapshot(out / "config.json")
    res, kinks = run_suite(config, seed=config.seed)
    width = max(map(len, res))
    for name, err in res.items():
        print(f"{name:{width}s}  {err:.3e}")
    worst = max(res.values())
    report = {"errors": res, "kinks_skipped": [f"{n}[{i}]" for n, i in kinks]}
    (out / "gradcheck.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    if kinks:
        print(f"{len(kinks)} probe(s) straddled a relu switch and were skipped")
    print(f"max relative error {worst:.3e} ({'ok' if worst < 1e-3 else 'FAIL'})")
    return 0 if worst < 1e-3 else 1


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "grad-check": cmd_grad_check}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        config = resolve_config(args)
    except (json.JSONDecodeError, TypeError) as exc:
        print(f"aadfss: bad config: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"aadfss: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](config, args)
    except CONTRACT_ERRORS as exc:
        print(f"aadfss {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
