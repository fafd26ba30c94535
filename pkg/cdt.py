#!/usr/bin/env python3
"""
Conditional Diffusion Trajectory predictor - single command-line front end

Subcommands map onto the task scripts:
    gen-data   gen_data.py             generate a synthetic dataset
    train      train_model.py          train a model variant
    sample     sample_predictions.py   write K trajectories per scenario
    eval       evaluate_predictions.py score a prediction file
    ablate     run_ablation.py         denoising-steps ablation
    plot       plot_ablation.py        SVG plot of an ablation CSV
    audit      audit_dataset.py        dataset invariant checks

Exit codes: 0 success, 2 known error (one line "error: <Class>: <message>"
on stderr), 1 unexpected failure.

Usage:
    python cdt.py gen-data --preset tiny --out data/tiny.jsonl
    python cdt.py train --preset tiny --data data/tiny.jsonl --out runs/tiny.json
    python cdt.py sample --ckpt runs/tiny.json --data data/tiny.jsonl --variant behavior --k 6 --out preds.jsonl
    python cdt.py eval --preds preds.jsonl --data data/tiny.jsonl --out report.csv
"""

import argparse
import sys

import audit_dataset
import evaluate_predictions
import gen_data
import plot_ablation
import run_ablation
import sample_predictions
import train_model
from common.errors import run_cli


COMMANDS = {
    "gen-data": (gen_data, "Generate synthetic driving scenarios"),
    "train": (train_model, "Train a trajectory diffusion model"),
    "sample": (sample_predictions, "Sample trajectories from a checkpoint"),
    "eval": (evaluate_predictions, "Score a prediction file"),
    "ablate": (run_ablation, "Run the denoising-steps ablation"),
    "plot": (plot_ablation, "Plot an ablation CSV"),
    "audit": (audit_dataset, "Audit a dataset file"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdt",
        description="Conditional diffusion trajectory prediction",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (module, help_text) in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text, description=help_text)
        module.add_arguments(cmd)
        cmd.set_defaults(handler=module.run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run_cli(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
