#!/usr/bin/env python3
"""
Sample Trajectories from a Checkpoint

Draws K trajectories per scenario and writes one JSON record per scenario
(id, samples in meters, confidences, mode_probs, tokens).

Usage:
    python sample_predictions.py --ckpt runs/behavior.json --data data/val.jsonl --variant behavior --out preds.jsonl
    python sample_predictions.py --ckpt runs/endpoint.json --data data/val.jsonl --variant endpoint --sigma-ep 0
"""

import argparse
import sys

from common.checkpoint import load_checkpoint
from common.diffusion import SampleMode, build_schedule
from common.errors import run_cli
from common.reports import write_predictions
from common.scene import read_dataset, split_dataset
from common.trainer import sample_dataset, sample_mode_for


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ckpt", type=str, required=True, help="Checkpoint file")
    parser.add_argument("--data", "-d", type=str, required=True, help="Scenarios to sample (JSON lines)")
    parser.add_argument("--variant", type=str, choices=[m.value for m in SampleMode],
                        help="Sampling mode (default: the checkpoint's own)")
    parser.add_argument("--k", type=int, default=6, help="Samples per scenario (default: 6)")
    parser.add_argument("--out", "-o", type=str, required=True, help="Prediction file (JSON lines)")
    parser.add_argument("--seed", type=int, default=0, help="Sampling seed (default: 0)")
    parser.add_argument("--sigma-ep", type=float, help="Endpoint noise std in meters (default: from checkpoint)")
    parser.add_argument("--val-only", action="store_true", help="Sample only the validation split of --data")
    parser.add_argument("--limit", type=int, help="Sample at most this many scenarios")
    parser.add_argument("--workers", type=int, default=1, help="Sampling threads (default: 1)")


def run(args) -> None:
    model, train_config, _ = load_checkpoint(args.ckpt)
    sched = build_schedule(train_config.T, train_config.schedule)
    mode = SampleMode(args.variant) if args.variant else sample_mode_for(model.variant)
    sigma = train_config.sigma_ep if args.sigma_ep is None else args.sigma_ep

    scenarios = read_dataset(args.data)
    if args.val_only:
        _, scenarios = split_dataset(scenarios, train_config.val_fraction)
    if args.limit is not None:
        scenarios = scenarios[:args.limit]

    print(f"  Sampling {len(scenarios)} scenarios: mode={mode.value} K={args.k} T={sched.T}")
    predictions = sample_dataset(model, scenarios, sched, k=args.k, mode=mode, seed=args.seed,
                                 sigma_ep=sigma, workers=args.workers, verbose=True)
    count = write_predictions(args.out, predictions)
    print(f"  Wrote {count} prediction sets to {args.out}")


def main() -> int:
    parser = argparse.ArgumentParser(description="Sample trajectories from a trained checkpoint")
    add_arguments(parser)
    return run_cli(run, parser.parse_args())


if __name__ == "__main__":
    sys.exit(main())
