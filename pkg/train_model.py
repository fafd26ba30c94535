#!/usr/bin/env python3
"""
Train a Trajectory Diffusion Model

Trains the denoiser, mode classifier and confidence decoder jointly and
writes <out> (final), <out stem>.best.json (best validation minADE) and
<out>.loss.csv (per-epoch loss curve).

Usage:
    python train_model.py --data data/scenarios.jsonl --out runs/behavior.json
    python train_model.py --preset tiny --data data/tiny.jsonl --out runs/tiny.json --variant baseline
    python train_model.py --data data/scenarios.jsonl --out runs/behavior.json --epochs 200 --resume runs/behavior.json
"""

import argparse
import sys
from dataclasses import replace

from common.config import Variant, load_config, parse_variant
from common.errors import InputError, run_cli
from common.scene import read_dataset, split_dataset
from common.trainer import Trainer


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", type=str, help="Experiment config JSON")
    parser.add_argument("--preset", type=str, help="Named preset (desk, tiny)")
    parser.add_argument("--data", "-d", type=str, required=True, help="Training dataset (JSON lines)")
    parser.add_argument("--val-data", type=str, help="Validation dataset (default: hash split of --data)")
    parser.add_argument("--out", "-o", type=str, required=True, help="Checkpoint path")
    parser.add_argument("--variant", type=str, choices=[v.value for v in Variant], help="Override the model variant")
    parser.add_argument("--epochs", type=int, help="Override the epoch count")
    parser.add_argument("--steps", type=int, help="Override the number of denoising steps T")
    parser.add_argument("--seed", type=int, help="Override the training seed")
    parser.add_argument("--resume", type=str, help="Continue from this checkpoint (weights, optimizer, step)")
    parser.add_argument("--quiet", "-q", action="store_true", help="No progress output")


def run(args) -> None:
    exp = load_config(args.config, args.preset)
    cfg = exp.train
    overrides = {}
    if args.variant:
        overrides["variant"] = parse_variant(args.variant)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.steps is not None:
        overrides["T"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides).validate()

    scenarios = read_dataset(args.data)
    if not scenarios:
        raise InputError(f"dataset {args.data} is empty")
    if args.val_data:
        train, val = scenarios, read_dataset(args.val_data)
    else:
        train, val = split_dataset(scenarios, cfg.val_fraction)

    if not args.quiet:
        print(f"\n{'=' * 60}")
        print(f"  Trajectory Diffusion Training - {cfg.variant.value}")
        print(f"  Train: {len(train)}  Val: {len(val)}  Epochs: {cfg.epochs}  T: {cfg.T}")
        print(f"{'=' * 60}\n")

    trainer = Trainer(exp.model, cfg, verbose=not args.quiet)
    if args.resume:
        trainer.resume(args.resume)
    result = trainer.train(train, val or None, checkpoint_path=args.out)

    if not args.quiet:
        print(f"\n  Final loss: {result.history[-1].total:.4f}")
        if result.best_val_min_ade is not None:
            print(f"  Best val minADE: {result.best_val_min_ade:.3f} m ({result.best_checkpoint_path})")


def main() -> int:
    parser = argparse.ArgumentParser(description="Train a trajectory diffusion model")
    add_arguments(parser)
    return run_cli(run, parser.parse_args())


if __name__ == "__main__":
    sys.exit(main())
