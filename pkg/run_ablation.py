#!/usr/bin/env python3
"""
Denoising-Steps Ablation

Trains one model per entry of the ablation plan (epochs = 7 x steps by
default), evaluates minADE6 / minFDE6 on the validation split and writes
ablation.csv plus ablation.svg into the output directory. Failed entries
are recorded and the sweep continues.

Usage:
    python run_ablation.py --data data/scenarios.jsonl --out runs/ablation
    python run_ablation.py --preset tiny --data data/tiny.jsonl --out runs/ablation_tiny
"""

import argparse
import sys
from dataclasses import asdict, replace
from pathlib import Path

from common.config import Variant, load_config, parse_variant
from common.errors import InputError, run_cli
from common.reports import plot_ablation, write_ablation_csv
from common.scene import read_dataset, split_dataset
from common.trainer import run_ablation


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", type=str, help="Experiment config JSON")
    parser.add_argument("--preset", type=str, help="Named preset (desk, tiny)")
    parser.add_argument("--data", "-d", type=str, required=True, help="Dataset (JSON lines)")
    parser.add_argument("--out", "-o", type=str, required=True, help="Output directory")
    parser.add_argument("--variant", type=str, choices=[v.value for v in Variant], help="Model variant")
    parser.add_argument("--steps", type=int, nargs="+", help="Override the list of step counts")
    parser.add_argument("--quiet", "-q", action="store_true", help="Less progress output")


def run(args) -> None:
    exp = load_config(args.config, args.preset)
    plan = exp.ablation
    if args.steps:
        plan = replace(plan, steps_list=list(args.steps)).validate()
    train_config = exp.train
    if args.variant:
        train_config = replace(train_config, variant=parse_variant(args.variant)).validate()

    scenarios = read_dataset(args.data)
    train, val = split_dataset(scenarios, train_config.val_fraction)
    if not train or not val:
        raise InputError(f"need both training and validation scenarios, got {len(train)} / {len(val)}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"\n{'=' * 60}")
    print(f"  Denoising-Steps Ablation: {', '.join(f'T={s}/{e}ep' for s, e in plan.entries())}")
    print(f"{'=' * 60}")

    rows = run_ablation(plan, train, val, exp.model, train_config, out_dir=out, verbose=not args.quiet)
    csv_path = write_ablation_csv(out / "ablation.csv", rows)
    svg_path = plot_ablation([asdict(r) for r in rows], out / "ablation.svg")

    print("\n  steps  epochs  minADE6  minFDE6  status")
    for r in rows:
        ade = f"{r.min_ade6:.3f}" if r.min_ade6 is not None else "-"
        fde = f"{r.min_fde6:.3f}" if r.min_fde6 is not None else "-"
        print(f"  {r.steps:>5}  {r.epochs:>6}  {ade:>7}  {fde:>7}  {r.status}")
    print(f"\n  CSV: {csv_path}")
    print(f"  Plot: {svg_path}")


def main() -> int:
    parser = argparse.ArgumentParser(description="Run the denoising-steps ablation")
    add_arguments(parser)
    return run_cli(run, parser.parse_args())


if __name__ == "__main__":
    sys.exit(main())
