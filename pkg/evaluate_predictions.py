#!/usr/bin/env python3
"""
Score a Prediction File

Computes minADE, minFDE, miss rate, ASD, FSD and ECFL for every scenario in
a prediction file and writes the report CSV (metric,K,value,n), the
per-scenario CSV and optionally an Excel workbook.

Usage:
    python evaluate_predictions.py --preds preds.jsonl --data data/val.jsonl --out report.csv
    python evaluate_predictions.py --preds preds.jsonl --data data/val.jsonl --out report.csv --xlsx report.xlsx
"""

import argparse
import sys
from pathlib import Path

from common.errors import InputError, run_cli
from common.reports import export_to_excel, read_predictions, write_metrics_csv, write_scenario_csv
from common.scene import read_dataset
from common.trainer import score_predictions


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preds", "-p", type=str, required=True, help="Prediction file (JSON lines)")
    parser.add_argument("--data", "-d", type=str, required=True, help="Scenarios with ground truth")
    parser.add_argument("--out", "-o", type=str, required=True, help="Report CSV")
    parser.add_argument("--per-scenario", type=str, help="Per-scenario CSV (default: <out stem>.scenarios.csv)")
    parser.add_argument("--xlsx", type=str, help="Also write an Excel workbook")
    parser.add_argument("--k", type=int, help="Require exactly K samples per scenario")


def run(args) -> None:
    predictions = read_predictions(args.preds)
    if not predictions:
        raise InputError(f"prediction file {args.preds} is empty")
    scenarios = read_dataset(args.data)
    report, rows = score_predictions(predictions, scenarios, args.k)

    out = Path(args.out)
    write_metrics_csv(out, report)
    per_scenario = Path(args.per_scenario) if args.per_scenario else out.with_name(out.stem + ".scenarios.csv")
    write_scenario_csv(per_scenario, rows)

    print(f"\n{'=' * 60}")
    print(f"  Evaluation: {len(rows)} scenarios, K={report.K}")
    print(f"{'=' * 60}")
    for row in report.rows():
        value = "n/a" if row["value"] is None else f"{row['value']:.4f}"
        print(f"  {row['metric']:<10} {value}")
    print(f"\n  Report: {out}")
    print(f"  Per-scenario: {per_scenario}")
    if args.xlsx:
        print(f"  Workbook: {export_to_excel(args.xlsx, report, rows)}")


def main() -> int:
    parser = argparse.ArgumentParser(description="Score a prediction file against ground truth")
    add_arguments(parser)
    return run_cli(run, parser.parse_args())


if __name__ == "__main__":
    sys.exit(main())
