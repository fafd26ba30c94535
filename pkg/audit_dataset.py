#!/usr/bin/env python3
"""
Dataset Audit Tool

Checks for:
1. Duplicate scenario ids
2. Wrong history/future lengths and focal agents missing their last step
3. Behavior labels that disagree with the recorded future
4. Intersection flags that disagree with the lane graph
5. Ground-truth futures leaving the drivable area
6. Focal frame not centered on the last observed pose
7. Class mix far from the configured one (chi-square)

Usage:
    python audit_dataset.py --data data/scenarios.jsonl
    python audit_dataset.py --data data/scenarios.jsonl --fix --out data/fixed.jsonl
"""

import argparse
import math
import sys
from collections import Counter
from typing import Dict, List, Optional, Sequence

import numpy as np

from common.config import DEFAULT_CLASS_MIX, load_config
from common.errors import InputError, run_cli
from common.scene import (FUTURE_STEPS, HISTORY_STEPS, Scenario, dataset_summary, detect_intersection,
                          label_behavior, points_in_drivable, read_dataset, write_dataset)


FRAME_TOLERANCE = 1e-3   # meters / radians
CHI2_WARN_PVALUE = 0.01


class DatasetAuditor:
    def __init__(self, scenarios: Sequence[Scenario], class_mix: Optional[Sequence[float]] = None):
        self.scenarios = list(scenarios)
        self.class_mix = class_mix
        self.issues: List[Dict] = []

    def add_issue(self, severity: str, category: str, description: str, ids: list = None):
        self.issues.append({
            'severity': severity,  # 'critical', 'warning', 'info'
            'category': category,
            'description': description,
            'ids': ids or []
        })

    def check_duplicate_ids(self):
        print("\n1. Checking for duplicate scenario ids...")
        counts = Counter(s.scenario_id for s in self.scenarios)
        dupes = sorted(i for i, c in counts.items() if c > 1)
        if dupes:
            self.add_issue('critical', 'duplicates', f"{len(dupes)} duplicated ids", dupes)
        print(f"   Found {len(dupes)} duplicated ids")

    def check_shapes(self):
        print("\n2. Checking history/future lengths...")
        bad = []
        for s in self.scenarios:
            if len(s.future_gt) != FUTURE_STEPS:
                bad.append(s.scenario_id)
                continue
            if any(len(a.positions) != HISTORY_STEPS for a in s.agents) or not s.focal.valid_mask[-1]:
                bad.append(s.scenario_id)
        if bad:
            self.add_issue('critical', 'shapes', f"{len(bad)} scenarios with wrong lengths or focal gaps", bad)
        print(f"   Found {len(bad)} malformed scenarios")

    def check_labels(self):
        print("\n3. Checking behavior labels against the futures...")
        bad = [s.scenario_id for s in self.scenarios if label_behavior(s.future_gt) is not s.behavior_label]
        if bad:
            self.add_issue('critical', 'labels', f"{len(bad)} labels disagree with the future", bad)
        print(f"   Found {len(bad)} mislabeled scenarios")

    def check_intersections(self):
        print("\n4. Checking intersection flags against the lane graph...")
        bad = [s.scenario_id for s in self.scenarios if detect_intersection(s.lanes) != s.is_intersection]
        if bad:
            self.add_issue('critical', 'intersections', f"{len(bad)} wrong intersection flags", bad)
        print(f"   Found {len(bad)} wrong flags")

    def check_drivable(self):
        print("\n5. Checking ground truth stays on the drivable area...")
        bad = [s.scenario_id for s in self.scenarios
               if not bool(points_in_drivable(s.future_gt, s.drivable).all())]
        if bad:
            self.add_issue('critical', 'drivable', f"{len(bad)} futures leave the drivable area", bad)
        print(f"   Found {len(bad)} off-road futures")

    def check_focal_frame(self):
        print("\n6. Checking the focal frame...")
        bad = []
        for s in self.scenarios:
            valid = np.flatnonzero(s.focal.valid_mask)
            if len(valid) < 2:
                bad.append(s.scenario_id)
                continue
            last, prev = s.focal.positions[valid[-1]], s.focal.positions[valid[-2]]
            heading = math.atan2(last[1] - prev[1], last[0] - prev[0])
            if np.hypot(*last) > FRAME_TOLERANCE or abs(heading) > FRAME_TOLERANCE:
                bad.append(s.scenario_id)
        if bad:
            self.add_issue('warning', 'frame', f"{len(bad)} scenarios not in the focal frame", bad)
        print(f"   Found {len(bad)} scenarios off the focal frame")

    def check_class_mix(self) -> Dict:
        print("\n7. Checking the class mix...")
        summary = dataset_summary(self.scenarios, self.class_mix)
        freq = summary['label_frequencies']
        print("   " + ", ".join(f"{k}={v:.3f}" for k, v in freq.items()))
        pvalue = summary['chi2_pvalue']
        if pvalue is not None and pvalue < CHI2_WARN_PVALUE:
            self.add_issue('warning', 'class_mix', f"label frequencies unlikely under {self.class_mix} (p={pvalue:.2e})")
        self.add_issue('info', 'summary', f"{summary['n_scenarios']} scenarios, "
                                          f"{summary['intersection_fraction']:.1%} intersections")
        return summary

    def run_full_audit(self) -> Dict:
        print("=" * 60)
        print("  DATASET AUDIT")
        print("=" * 60)
        print(f"\n   Scenarios: {len(self.scenarios)}")

        self.check_duplicate_ids()
        self.check_shapes()
        self.check_labels()
        self.check_intersections()
        self.check_drivable()
        self.check_focal_frame()
        summary = self.check_class_mix()

        print("\n" + "=" * 60)
        print("  SUMMARY")
        print("=" * 60)

        critical = [i for i in self.issues if i['severity'] == 'critical']
        warnings = [i for i in self.issues if i['severity'] == 'warning']
        info = [i for i in self.issues if i['severity'] == 'info']

        print(f"\n   Critical: {len(critical)}")
        print(f"   Warnings: {len(warnings)}")
        print(f"   Info:     {len(info)}")

        if critical:
            print("\n   CRITICAL ISSUES (require fix):")
            for i in critical:
                print(f"   - {i['description']} (e.g. {', '.join(i['ids'][:3])})")

        print("\n" + "=" * 60)
        return {'critical': critical, 'issues': self.issues, 'summary': summary}

    def fix(self) -> List[Scenario]:
        """Recompute labels and intersection flags from the geometry"""
        for s in self.scenarios:
            s.behavior_label = label_behavior(s.future_gt)
            s.is_intersection = detect_intersection(s.lanes)
        return self.scenarios


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", "-d", type=str, required=True, help="Dataset (JSON lines)")
    parser.add_argument("--config", "-c", type=str, help="Config whose class_mix is the reference")
    parser.add_argument("--fix", action="store_true", help="Recompute labels and intersection flags")
    parser.add_argument("--out", "-o", type=str, help="Where --fix writes the repaired dataset")


def run(args) -> None:
    class_mix = load_config(args.config).dataset.class_mix if args.config else DEFAULT_CLASS_MIX
    auditor = DatasetAuditor(read_dataset(args.data), class_mix)
    result = auditor.run_full_audit()

    fixable = {'labels', 'intersections'}
    if args.fix:
        if not args.out:
            raise InputError("--fix needs --out for the repaired dataset")
        count = write_dataset(args.out, auditor.fix())
        print(f"\n--fix specified, wrote {count} repaired scenarios to {args.out}")
        auditor.issues = []
        result = auditor.run_full_audit()
    elif any(i['category'] in fixable for i in result['critical']):
        print("\nTo repair labels and flags, run:")
        print(f"  python audit_dataset.py --data {args.data} --fix --out <path>")

    if result['critical']:
        raise InputError(f"audit found {len(result['critical'])} critical issue(s)")


def main() -> int:
    parser = argparse.ArgumentParser(description="Dataset Audit Tool")
    add_arguments(parser)
    return run_cli(run, parser.parse_args())


if __name__ == "__main__":
    sys.exit(main())
