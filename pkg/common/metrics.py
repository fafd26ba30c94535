"""
Trajectory metrics - accuracy, diversity and scene compliance of K samples
Provides consistent scoring across evaluation, training and the ablation
"""

from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InputError, MetricError
from .scene import DrivableArea, points_in_drivable


MISS_THRESHOLD = 2.0  # meters; a miss is strictly greater


def _check(samples: np.ndarray, gt: np.ndarray):
    samples = np.asarray(samples, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[-1] != 2 or len(samples) < 1:
        raise InputError(f"samples must be (K >= 1, H, 2), got {samples.shape}")
    if gt.shape != samples.shape[1:]:
        raise InputError(f"ground truth {gt.shape} does not match samples {samples.shape}")
    return samples, gt


def ade(samples: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """(K,) mean per-step L2 error of each sample"""
    samples, gt = _check(samples, gt)
    return np.linalg.norm(samples - gt, axis=-1).mean(axis=-1)


def fde(samples: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """(K,) final-step L2 error of each sample"""
    samples, gt = _check(samples, gt)
    return np.linalg.norm(samples[:, -1] - gt[-1], axis=-1)


def min_ade(samples: np.ndarray, gt: np.ndarray) -> float:
    return float(ade(samples, gt).min())


def min_fde(samples: np.ndarray, gt: np.ndarray) -> float:
    return float(fde(samples, gt).min())


def miss_rate(samples: np.ndarray, gt: np.ndarray, threshold: float = MISS_THRESHOLD) -> int:
    """1 if the best final-step error exceeds the threshold, else 0"""
    return int(min_fde(samples, gt) > threshold)


def _pairs(samples: np.ndarray):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[-1] != 2:
        raise InputError(f"samples must be (K, H, 2), got {samples.shape}")
    if len(samples) < 2:
        raise MetricError(f"self-distance needs K >= 2 samples, got {len(samples)}")
    return samples, list(combinations(range(len(samples)), 2))


def asd(samples: np.ndarray) -> float:
    """Mean pairwise ADE over all unordered sample pairs"""
    samples, pairs = _pairs(samples)
    return float(np.mean([np.linalg.norm(samples[i] - samples[j], axis=-1).mean() for i, j in pairs]))


def fsd(samples: np.ndarray) -> float:
    """Mean pairwise final-step distance over all unordered sample pairs"""
    samples, pairs = _pairs(samples)
    return float(np.mean([np.linalg.norm(samples[i, -1] - samples[j, -1]) for i, j in pairs]))


def ecfl(samples: np.ndarray, drivable: DrivableArea) -> float:
    """Fraction of samples with every point inside the drivable area"""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or len(samples) < 1:
        raise InputError(f"samples must be (K >= 1, H, 2), got {samples.shape}")
    if not drivable.polygons:
        raise MetricError("drivable area is empty; ECFL is undefined")
    K, H, _ = samples.shape
    inside = points_in_drivable(samples.reshape(K * H, 2), drivable).reshape(K, H)
    return float(inside.all(axis=1).sum() / K)


@dataclass
class ScenarioMetrics:
    scenario_id: str
    min_ade: float
    min_fde: float
    miss: int
    asd: Optional[float]
    fsd: Optional[float]
    ecfl: float
    is_intersection: bool = False
    label: str = ""

    def to_dict(self) -> Dict:
        return asdict(self)


def scenario_metrics(samples: np.ndarray, gt: np.ndarray, drivable: DrivableArea, scenario_id: str = "",
                     is_intersection: bool = False, label: str = "") -> ScenarioMetrics:
    """Every metric for one scenario; diversity is None when K = 1"""
    many = len(samples) >= 2
    return ScenarioMetrics(
        scenario_id=scenario_id,
        min_ade=min_ade(samples, gt),
        min_fde=min_fde(samples, gt),
        miss=miss_rate(samples, gt),
        asd=asd(samples) if many else None,
        fsd=fsd(samples) if many else None,
        ecfl=ecfl(samples, drivable),
        is_intersection=is_intersection,
        label=label,
    )


@dataclass
class MetricsReport:
    min_ade: float
    min_fde: float
    miss_rate: float
    asd: Optional[float]
    fsd: Optional[float]
    ecfl: float
    K: int
    n_scenarios: int

    METRIC_NAMES = ("min_ade", "min_fde", "miss_rate", "asd", "fsd", "ecfl")

    def rows(self) -> List[Dict]:
        """One {metric, K, value, n} row per metric"""
        return [{"metric": name, "K": self.K, "value": getattr(self, name), "n": self.n_scenarios}
                for name in self.METRIC_NAMES]

    def summary(self) -> str:
        parts = [f"{name}={getattr(self, name):.4f}" for name in self.METRIC_NAMES
                 if getattr(self, name) is not None]
        return f"K={self.K} n={self.n_scenarios} " + " ".join(parts)


def aggregate(per_scenario: Sequence[ScenarioMetrics], K: int) -> MetricsReport:
    """
    Unweighted means over scenarios

    Raises:
        MetricError: no scenarios
    """
    if not per_scenario:
        raise MetricError("cannot aggregate metrics over zero scenarios")

    def mean(name: str) -> Optional[float]:
        values = [getattr(m, name) for m in per_scenario]
        if any(v is None for v in values):
            return None
        return float(np.mean(values))

    return MetricsReport(
        min_ade=mean("min_ade"),
        min_fde=mean("min_fde"),
        miss_rate=mean("miss"),
        asd=mean("asd"),
        fsd=mean("fsd"),
        ecfl=mean("ecfl"),
        K=K,
        n_scenarios=len(per_scenario),
    )
