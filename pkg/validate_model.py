#!/usr/bin/env python3
"""
Model Validation Script - slow acceptance checks on synthetic data
Trains real models; expect minutes with --quick and hours at desk scale

Checks:
1. Overfit: a small training set is memorized (min_ade6 < 0.5 m)
2. Mode classifier: held-out accuracy and per-class recall; confidence ranking
3. Controllability: samples follow the requested behavior token
4. Variant ordering: diversity, feasibility and accuracy across the four variants
5. Denoising-steps ablation trend
6. Determinism: datasets, checkpoints and predictions repeat bit for bit

Run: python validate_model.py --quick
"""

import argparse
import sys
import tempfile
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Dict

import numpy as np

from common.checkpoint import load_checkpoint, save_checkpoint
from common.config import AblationPlan, Variant, load_config
from common.scene import BEHAVIORS, generate_dataset, split_dataset
from common.trainer import (Trainer, classifier_report, confidence_ranking, controllability, evaluate, run_ablation,
                            sample_dataset)


# Validation results
results = {"passed": 0, "failed": 0, "warnings": 0, "errors": []}

OVERFIT_SCENARIOS = 32
OVERFIT_EPOCHS = 500
OVERFIT_TARGET = 0.5          # meters
CLASSIFIER_ACCURACY = 0.95
CLASSIFIER_RECALL = 0.90
CONTROL_TARGET = 0.90
ENDPOINT_FSD_RATIO = 0.1


def log_pass(test_name: str, details: str = ""):
    results["passed"] += 1
    print(f"  ✓ {test_name}" + (f": {details}" if details else ""))


def log_fail(test_name: str, details: str):
    results["failed"] += 1
    results["errors"].append(f"{test_name}: {details}")
    print(f"  ✗ {test_name}: {details}")


def log_warn(test_name: str, details: str):
    results["warnings"] += 1
    print(f"  ⚠ {test_name}: {details}")


def check(test_name: str, ok: bool, details: str):
    if ok:
        log_pass(test_name, details)
    else:
        log_fail(test_name, details)


def banner(title: str):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


class Validation:
    """Shared data and trained models for the checks; each variant is trained once"""

    def __init__(self, preset: str, n_scenarios: int, epochs: int = None, quick: bool = False):
        exp = load_config(preset=preset)
        self.exp = exp
        self.quick = quick
        self.dataset_config = replace(exp.dataset, n_scenarios=n_scenarios).validate()
        self.train_config = exp.train if epochs is None else replace(exp.train, epochs=epochs).validate()
        print(f"\n  Generating {n_scenarios} scenarios...")
        scenarios = generate_dataset(self.dataset_config)
        self.train, self.val = split_dataset(scenarios, self.train_config.val_fraction)
        print(f"  Train: {len(self.train)}  Val: {len(self.val)}")
        self.trainers: Dict[Variant, Trainer] = {}

    def trainer(self, variant: Variant) -> Trainer:
        if variant not in self.trainers:
            print(f"\n  Training {variant.value} ({self.train_config.epochs} epochs)...")
            cfg = replace(self.train_config, variant=variant).validate()
            trainer = Trainer(self.exp.model, cfg, verbose=not self.quick)
            trainer.train(self.train)
            self.trainers[variant] = trainer
        return self.trainers[variant]


# ==================== 1. OVERFIT ====================

def validate_overfit(v: Validation):
    """A few dozen scenarios must be memorized"""
    banner("1. OVERFIT CONVERGENCE")
    subset = v.train[:OVERFIT_SCENARIOS]
    epochs = 50 if v.quick else OVERFIT_EPOCHS
    cfg = replace(v.train_config, epochs=epochs, batch_size=len(subset), warmup_steps=10,
                  eval_every=max(1, epochs // 10), eval_scenarios=len(subset), eval_k=6,
                  variant=Variant.BEHAVIOR).validate()
    result = Trainer(v.exp.model, cfg, verbose=False).train(subset, subset)
    best = result.best_val_min_ade
    if best is None:
        log_fail("Overfit run", "no training-set evaluation was recorded")
        return
    if best < OVERFIT_TARGET:
        log_pass("Training-set min_ade6", f"{best:.3f} m after {epochs} epochs")
    elif v.quick:
        log_warn("Training-set min_ade6", f"{best:.3f} m after {epochs} epochs (quick run, target {OVERFIT_TARGET})")
    else:
        log_fail("Training-set min_ade6", f"{best:.3f} m >= {OVERFIT_TARGET} m")
    first, last = result.history[0].total, result.history[-1].total
    check("Loss decreases", last < first, f"{first:.3f} -> {last:.3f}")


# ==================== 2. CLASSIFIER ====================

def validate_classifier(v: Validation):
    banner("2. MODE CLASSIFIER")
    report = classifier_report(v.trainer(Variant.BEHAVIOR).model, v.val)
    print(f"  Held-out: {report.n} scenarios")
    check("Accuracy", report.accuracy >= CLASSIFIER_ACCURACY,
          f"{report.accuracy:.4f} (target >= {CLASSIFIER_ACCURACY})")
    for name, recall in report.recall.items():
        if np.isnan(recall):
            log_warn(f"Recall {name}", "no held-out samples of this class")
            continue
        check(f"Recall {name}", recall >= CLASSIFIER_RECALL, f"{recall:.4f} (target >= {CLASSIFIER_RECALL})")

    trainer = v.trainer(Variant.BEHAVIOR)
    subset = v.val[:100] if v.quick else v.val[:1000]
    _, _, predictions = evaluate(trainer.model, subset, trainer.schedule, k=6)
    rho = confidence_ranking(predictions, subset)
    check("Confidence ranking", rho > 0, f"Spearman(final score, -ADE) = {rho:.3f} over {len(subset)} scenarios")


# ==================== 3. CONTROLLABILITY ====================

def validate_controllability(v: Validation):
    banner("3. CONTROLLABILITY")
    trainer = v.trainer(Variant.BEHAVIOR)
    crossings = [s for s in v.val if s.is_intersection]
    if v.quick:
        crossings = crossings[:20]
    if not crossings:
        log_warn("Controllability", "no held-out intersection scenarios")
        return
    print(f"  Intersection scenarios: {len(crossings)}")
    for mode in BEHAVIORS:
        rate = controllability(trainer.model, crossings, trainer.schedule, mode)
        check(f"Token {mode.value}", rate >= CONTROL_TARGET, f"{rate:.1%} of samples labeled {mode.value}")


# ==================== 4. VARIANT ORDERING ====================

def validate_variant_ordering(v: Validation):
    """Diversity, drivability and accuracy relations between the four variants"""
    banner("4. VARIANT ORDERING")
    subset = v.val[:100] if v.quick else v.val
    reports = {}
    for variant in Variant:
        trainer = v.trainer(variant)
        report, _, _ = evaluate(trainer.model, subset, trainer.schedule, k=6, sigma_ep=v.train_config.sigma_ep)
        reports[variant] = report
        print(f"  {variant.value:<9} {report.summary()}")

    base, beh, ep, nomap = (reports[Variant.BASELINE], reports[Variant.BEHAVIOR],
                            reports[Variant.ENDPOINT], reports[Variant.NOMAP])
    check("Behavior tokens raise diversity", beh.fsd > base.fsd, f"FSD {beh.fsd:.3f} > {base.fsd:.3f}")
    check("Map-free diversity", nomap.fsd >= beh.fsd, f"FSD {nomap.fsd:.3f} >= {beh.fsd:.3f}")
    check("Map keeps samples drivable", nomap.ecfl < beh.ecfl, f"ECFL {nomap.ecfl:.3f} < {beh.ecfl:.3f}")
    check("Endpoint token accuracy", ep.min_fde < base.min_fde, f"minFDE {ep.min_fde:.3f} < {base.min_fde:.3f}")
    check("Endpoint token collapses diversity", ep.fsd < ENDPOINT_FSD_RATIO * base.fsd,
          f"FSD {ep.fsd:.3f} < {ENDPOINT_FSD_RATIO:.0%} of {base.fsd:.3f}")


# ==================== 5. ABLATION ====================

def validate_ablation(v: Validation):
    banner("5. DENOISING-STEPS ABLATION")
    plan = AblationPlan([5, 10, 20]) if v.quick else v.exp.ablation
    subset = v.val[:100] if v.quick else v.val
    rows = run_ablation(plan, v.train, subset, v.exp.model, v.train_config, verbose=False)
    ade = {}
    for r in rows:
        print(f"  T={r.steps:<4} epochs={r.epochs:<4} minADE6={r.min_ade6}  {r.status}")
        if r.status == "ok":
            ade[r.steps] = r.min_ade6
        else:
            log_fail(f"Ablation T={r.steps}", r.status)
    if 5 in ade and 20 in ade:
        check("20 steps beat 5", ade[20] <= ade[5], f"{ade[20]:.3f} <= {ade[5]:.3f}")
    else:
        log_warn("20 vs 5 steps", "entry missing")
    if all(s in ade for s in (5, 20, 50, 100)):
        early, late = ade[5] - ade[20], ade[50] - ade[100]
        check("Diminishing returns", late < early, f"50->100 gain {late:.3f} < 5->20 gain {early:.3f}")


# ==================== 6. DETERMINISM ====================

def validate_determinism(v: Validation):
    banner("6. DETERMINISM")
    cfg = replace(v.dataset_config, n_scenarios=50)
    check("Dataset repeats", generate_dataset(cfg) == generate_dataset(cfg, workers=4), "50 scenarios, 1 vs 4 workers")

    trainer = v.trainer(Variant.BEHAVIOR)
    subset = v.val[:10]
    with tempfile.TemporaryDirectory() as tmp:
        a = save_checkpoint(Path(tmp) / "a.json", trainer.model, trainer.train_config)
        b = save_checkpoint(Path(tmp) / "b.json", load_checkpoint(a)[0], trainer.train_config)
        check("Checkpoint roundtrip", a.read_bytes() == b.read_bytes(), "reloaded model saves byte-identical")
        short = replace(trainer.train_config, epochs=1).validate()
        paths = []
        for name in ("c.json", "d.json"):
            rerun = Trainer(v.exp.model, short, verbose=False)
            rerun.train(v.train[:32])
            paths.append(save_checkpoint(Path(tmp) / name, rerun.model, short, rerun.optimizer, rerun.step))
        same = paths[0].read_bytes() == paths[1].read_bytes()
        check("Training repeats", same, "two 1-epoch runs give byte-identical checkpoints")

    first = sample_dataset(trainer.model, subset, trainer.schedule, seed=11)
    second = sample_dataset(trainer.model, subset, trainer.schedule, seed=11, workers=4)
    same = all(np.array_equal(x.samples, y.samples) for x, y in zip(first, second))
    check("Predictions repeat", same, f"{len(subset)} scenarios, 1 vs 4 workers")


SECTIONS = {
    "overfit": validate_overfit,
    "classifier": validate_classifier,
    "control": validate_controllability,
    "variants": validate_variant_ordering,
    "ablation": validate_ablation,
    "determinism": validate_determinism,
}


def main():
    parser = argparse.ArgumentParser(description="Slow model acceptance checks")
    parser.add_argument("--preset", type=str, default="desk", help="Config preset (default: desk)")
    parser.add_argument("--n", type=int, help="Scenarios to generate (default: 10000, 600 with --quick)")
    parser.add_argument("--epochs", type=int, help="Override the training epochs")
    parser.add_argument("--quick", action="store_true", help="Reduced sizes; misses become warnings where noted")
    parser.add_argument("--only", nargs="+", choices=list(SECTIONS), help="Run only these checks")
    args = parser.parse_args()

    print("\n" + "=" * 60)
    print("  CDT MODEL VALIDATION")
    print(f"  {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 60)

    n = args.n or (600 if args.quick else 10000)
    v = Validation(args.preset, n, args.epochs, args.quick)
    for name in args.only or SECTIONS:
        SECTIONS[name](v)

    # Summary
    total = results["passed"] + results["failed"]
    print("\n" + "=" * 60)
    print("  VALIDATION SUMMARY")
    print("=" * 60)
    print(f"  ✓ Passed:   {results['passed']}/{total}")
    print(f"  ✗ Failed:   {results['failed']}/{total}")
    print(f"  ⚠ Warnings: {results['warnings']}")

    if results["errors"]:
        print("\n  FAILURES:")
        for error in results["errors"]:
            print(f"    - {error}")

    if results["failed"] > 0:
        print("\n  ❌ MODEL VALIDATION FAILED")
        return False
    print("\n  ✅ MODEL VALIDATED")
    return True


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
