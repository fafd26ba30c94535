#!/usr/bin/env python3
"""
Synthetic Scenario Generator

Writes a JSON-lines dataset of driving scenarios (lanes, drivable area,
agent histories, focal future and behavior label). An existing file made
from the same generator settings is reused unless --refresh is given.

Usage:
    python gen_data.py --out data/scenarios.jsonl
    python gen_data.py --preset tiny --out data/tiny.jsonl
    python gen_data.py --config exp.json --n 10000 --workers 4 --refresh
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from common.config import DEFAULT_CACHE_DIR, load_config
from common.errors import run_cli
from common.scene import dataset_summary, generate_dataset, write_dataset


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", type=str, help="Experiment config JSON")
    parser.add_argument("--preset", type=str, help="Named preset (desk, tiny)")
    parser.add_argument("--out", "-o", type=str,
                        help=f"Output JSON-lines file (default: {DEFAULT_CACHE_DIR}/scenarios_<fingerprint>.jsonl)")
    parser.add_argument("--n", type=int, help="Override the number of scenarios")
    parser.add_argument("--seed", type=int, help="Override the generator seed")
    parser.add_argument("--workers", type=int, default=1, help="Generator threads (default: 1)")
    parser.add_argument("--refresh", action="store_true", help="Regenerate even if a matching file exists")


def meta_path(out: Path) -> Path:
    return out.with_name(out.name + ".meta.json")


def run(args) -> Path:
    cfg = load_config(args.config, args.preset).dataset
    if args.n is not None:
        cfg = replace(cfg, n_scenarios=args.n)
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    cfg.validate()

    fingerprint = cfg.fingerprint()
    out = Path(args.out) if args.out else DEFAULT_CACHE_DIR / f"scenarios_{fingerprint}.jsonl"
    meta = meta_path(out)

    print(f"\n{'=' * 60}")
    print("  Synthetic Scenario Generator")
    print(f"  Scenarios: {cfg.n_scenarios}  Seed: {cfg.rng_seed}  Fingerprint: {fingerprint}")
    print(f"{'=' * 60}\n")

    if not args.refresh and out.exists() and meta.exists():
        try:
            cached = json.loads(meta.read_text(encoding="utf-8")).get("fingerprint")
        except (OSError, json.JSONDecodeError):
            cached = None
        if cached == fingerprint:
            print(f"  Using cached dataset: {out} (pass --refresh to regenerate)")
            return out

    scenarios = generate_dataset(cfg, workers=args.workers)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = write_dataset(out, scenarios)
    summary = dataset_summary(scenarios, cfg.class_mix)
    meta.write_text(json.dumps({"fingerprint": fingerprint, "config": cfg.to_dict(), "summary": summary},
                               indent=2), encoding="utf-8")

    print(f"  Wrote {count} scenarios to {out}")
    freq = summary["label_frequencies"]
    print("  Labels: " + ", ".join(f"{k}={v:.3f}" for k, v in freq.items()))
    print(f"  Intersections: {summary['intersection_fraction']:.3f}")
    return out


def main() -> int:
    parser = argparse.ArgumentParser(
        description="Generate synthetic driving scenarios",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Environment Variables:
  CDT_CACHE_DIR    - Default output directory (default: .cache next to the code)
  CDT_NUM_THREADS  - BLAS threads (default: 1)
        """
    )
    add_arguments(parser)
    return run_cli(run, parser.parse_args())


if __name__ == "__main__":
    sys.exit(main())
