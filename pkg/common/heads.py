"""
Prediction heads - mode classifier and confidence decoder, with their losses
and the analysis helpers built on them
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .encoder import ConditionSet
from .errors import InputError, UsageError
from .ndiff import (LayerNorm, MLP, Module, MultiHeadAttention, Tensor, absolute, clamp_min, concat,
                    log, sigmoid, softmax, take, tmean)
from .scene import BEHAVIORS


PROB_FLOOR = 1e-12


class ModeClassifier(Module):
    """Self-attention between fused agent tokens, focal token + focal history -> MLP -> 3 logits"""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.dim = dim
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm = LayerNorm(dim)
        self.mlp = MLP([2 * dim, dim, len(BEHAVIORS)], rng)

    def logits(self, cond: ConditionSet) -> Tensor:
        tokens = cond.agent_tokens
        tokens = self.norm(tokens + self.attn(tokens, tokens, key_mask=cond.agent_mask))
        focal = tokens[:, 0, :]
        return self.mlp(concat([focal, cond.focal_history], axis=1))

    def __call__(self, cond: ConditionSet) -> Tensor:
        """(B, 3) probabilities in BEHAVIORS order"""
        return softmax(self.logits(cond), axis=-1)


def class_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy -log p_true with the probability floored at 1e-12"""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != len(labels):
        raise InputError(f"class_loss: probs {probs.shape} vs {len(labels)} labels")
    p_true = take(probs, (np.arange(len(labels)), labels))
    return tmean(-log(clamp_min(p_true, PROB_FLOOR)))


class ConfidenceDecoder(Module):
    """MLP over time-pooled final denoiser features -> sigmoid score per sample"""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mlp = MLP([dim, dim, 1], rng)

    def __call__(self, features: Tensor) -> Tensor:
        pooled = tmean(features, axis=1)
        return sigmoid(self.mlp(pooled)).reshape(features.shape[0])


def confidence_target(estimated: np.ndarray, gt: np.ndarray, tau: float = 2.0) -> np.ndarray:
    """exp(-ADE / tau) for (B, H, 2) or (H, 2) trajectories in meters"""
    estimated = np.asarray(estimated, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if estimated.shape != gt.shape:
        raise InputError(f"confidence_target: shape {estimated.shape} vs {gt.shape}")
    ade = np.linalg.norm(estimated - gt, axis=-1).mean(axis=-1)
    return np.exp(-ade / tau)


def confidence_loss(scores: Tensor, target: np.ndarray) -> Tensor:
    """L1 between decoder scores and their targets, averaged over the batch"""
    return tmean(absolute(scores - np.asarray(target)))


def confidence(decoder: ConfidenceDecoder, features: Tensor, estimated: Optional[np.ndarray] = None,
               gt: Optional[np.ndarray] = None, tau: float = 2.0, training: bool = False):
    """
    Decoder scores, plus the L1 confidence loss when training

    Returns:
        scores (B,) at inference; (scores, loss) when training

    Raises:
        UsageError: training without an estimate and a ground truth
    """
    scores = decoder(features)
    if not training:
        return scores
    if estimated is None or gt is None:
        raise UsageError("confidence training needs both the estimated and the ground-truth trajectory")
    return scores, confidence_loss(scores, confidence_target(estimated, gt, tau))


def final_score(mode_probs: np.ndarray, decoder_scores: np.ndarray, chosen: Sequence[int]) -> np.ndarray:
    """Classifier probability of each sample's mode times its decoder score"""
    return np.asarray(mode_probs)[np.asarray(chosen, dtype=np.int64)] * np.asarray(decoder_scores)


def rank_predictions(scores: Sequence[float]) -> List[int]:
    """Sample indices by descending score; equal scores keep the lower index first"""
    return [int(i) for i in np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")]


# ==================== CLASSIFIER ANALYSIS ====================

@dataclass
class ConfusionReport:
    counts: np.ndarray       # (3, 3) rows = true class
    normalized: np.ndarray   # row-normalized
    accuracy: float
    precision: Dict[str, float]
    recall: Dict[str, float]
    n: int


def confusion_matrix(predicted: Sequence[int], actual: Sequence[int]) -> ConfusionReport:
    """
    Row-normalized 3x3 confusion matrix with accuracy and per-class precision/recall

    Classes with no support get NaN recall (no true samples) or NaN precision (never predicted).
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise InputError(f"confusion_matrix: need equal non-empty inputs, got {predicted.shape} / {actual.shape}")
    n_classes = len(BEHAVIORS)
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (actual, predicted), 1)
    row = counts.sum(axis=1, keepdims=True)
    col = counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        normalized = np.where(row > 0, counts / np.maximum(row, 1), 0.0)
        recall = np.where(row[:, 0] > 0, np.diag(counts) / np.maximum(row[:, 0], 1), np.nan)
        precision = np.where(col > 0, np.diag(counts) / np.maximum(col, 1), np.nan)
    names = [b.value for b in BEHAVIORS]
    return ConfusionReport(
        counts=counts,
        normalized=normalized,
        accuracy=float(np.trace(counts) / counts.sum()),
        precision={name: float(v) for name, v in zip(names, precision)},
        recall={name: float(v) for name, v in zip(names, recall)},
        n=int(counts.sum()),
    )
