#!/usr/bin/env python3
"""
Plot an ablation CSV as an SVG line chart

Usage:
    python plot_ablation.py --in runs/ablation/ablation.csv --out ablation.svg
"""

import argparse
import sys

from common.errors import run_cli
from common.reports import plot_ablation, read_ablation_csv


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--in", dest="input", type=str, required=True, help="Ablation CSV")
    parser.add_argument("--out", "-o", type=str, required=True, help="SVG output")


def run(args) -> None:
    rows = read_ablation_csv(args.input)
    path = plot_ablation(rows, args.out)
    print(f"  Plotted {sum(r['status'] == 'ok' for r in rows)}/{len(rows)} entries to {path}")


def main() -> int:
    parser = argparse.ArgumentParser(description="Plot the denoising-steps ablation")
    add_arguments(parser)
    return run_cli(run, parser.parse_args())


if __name__ == "__main__":
    sys.exit(main())
