"""
Training and evaluation harness
Features:
- Joint training of denoiser, mode classifier and confidence decoder
- Warmup + cosine learning rate, AdamW, per-epoch loss curve
- Best-on-validation and final checkpoints; NaN aborts keep the last good weights
- Dataset-level sampling/evaluation, denoising-steps ablation, controllability
- Confidence ranking quality (Spearman over final scores vs sample ADE)
"""

import concurrent.futures
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from tqdm import tqdm

from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .config import AblationPlan, ModelConfig, TrainConfig, Variant, parse_variant
from .diffusion import (BehaviorToken, NoiseSchedule, PredictionSet, SampleMode, Sampler, build_schedule,
                        predict_x0, q_sample)
from .encoder import ScenarioFeatures, collate, collate_scenarios, featurize_scenario
from .errors import CDTError, ConfigError, InputError, NumericError
from .heads import ConfusionReport, class_loss, confidence_loss, confidence_target, confusion_matrix
from .metrics import MetricsReport, ScenarioMetrics, aggregate, scenario_metrics
from .model import TrajectoryDiffusionModel
from .ndiff import AdamW, LrSchedule, Tensor, backward, clamp_min, no_grad, sqrt, tmean, tsum
from .reports import write_loss_curve
from .scene import Behavior, Scenario, label_behavior, scenario_rng


# ==================== LOSS ====================

@dataclass
class LossBreakdown:
    total: float
    reg: float
    cls: float
    conf: float

    def to_dict(self) -> Dict[str, float]:
        return {"total": self.total, "reg": self.reg, "cls": self.cls, "conf": self.conf}


def _check_finite(name: str, value: Tensor) -> None:
    if not np.all(np.isfinite(value.data)):
        raise NumericError(name, f"{name} loss is not finite")


def total_loss(eps_hat: Tensor, eps: np.ndarray, mode_probs: Tensor, labels: np.ndarray,
               conf: Tensor, conf_target: np.ndarray, gamma1: float, gamma2: float) -> Tuple[Tensor, LossBreakdown]:
    """
    L = L_reg + gamma1 * L_class + gamma2 * L_conf

    L_reg is the L2 norm of each sample's noise residual, averaged over the batch.

    Raises:
        NumericError: a component is NaN/Inf (names the component)
    """
    resid = eps_hat - np.asarray(eps)
    axes = tuple(range(1, resid.ndim))
    l_reg = tmean(sqrt(clamp_min(tsum(resid * resid, axis=axes), 1e-24)))
    _check_finite("reg", l_reg)
    l_cls = class_loss(mode_probs, labels)
    _check_finite("class", l_cls)
    l_conf = confidence_loss(conf, conf_target)
    _check_finite("conf", l_conf)
    total = l_reg + gamma1 * l_cls + gamma2 * l_conf
    _check_finite("total", total)
    return total, LossBreakdown(total.item(), l_reg.item(), l_cls.item(), l_conf.item())


# ==================== SAMPLING / EVALUATION ====================

def sample_mode_for(variant: Union[Variant, str]) -> SampleMode:
    variant = parse_variant(variant)
    if variant is Variant.BASELINE:
        return SampleMode.BASELINE
    if variant is Variant.ENDPOINT:
        return SampleMode.ENDPOINT
    return SampleMode.BEHAVIOR


def sample_dataset(
    model: TrajectoryDiffusionModel,
    scenarios: Sequence[Scenario],
    sched: NoiseSchedule,
    k: int = 6,
    mode: Optional[SampleMode] = None,
    seed: int = 0,
    sigma_ep: float = 0.5,
    workers: int = 1,
    verbose: bool = False,
) -> List[PredictionSet]:
    """
    Sample every scenario; scenario i draws from its own (seed, i) stream,
    so results do not depend on the worker count
    """
    mode = mode or sample_mode_for(model.variant)

    def run(i: int) -> PredictionSet:
        return Sampler(model, sched).sample(scenarios[i], k=k, mode=mode, rng=scenario_rng(seed, i),
                                            sigma_ep=sigma_ep)

    indices = range(len(scenarios))
    if workers <= 1:
        return [run(i) for i in tqdm(indices, desc="sampling", disable=not verbose, leave=False)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(tqdm(executor.map(run, indices), total=len(scenarios), desc="sampling",
                         disable=not verbose, leave=False))


def score_predictions(predictions: Sequence[PredictionSet], scenarios: Sequence[Scenario],
                      k: Optional[int] = None) -> Tuple[MetricsReport, List[ScenarioMetrics]]:
    """
    Match predictions to scenarios by id and compute every metric

    Raises:
        InputError: a prediction has no matching scenario or the wrong K
    """
    by_id = {s.scenario_id: s for s in scenarios}
    rows = []
    for pred in predictions:
        scenario = by_id.get(pred.scenario_id)
        if scenario is None:
            raise InputError(f"prediction for unknown scenario '{pred.scenario_id}'")
        if k is not None and pred.k != k:
            raise InputError(f"scenario {pred.scenario_id}: expected K={k} samples, got {pred.k}")
        gt = scenario.future_gt[:pred.samples.shape[1]]
        rows.append(scenario_metrics(pred.samples, gt, scenario.drivable, scenario.scenario_id,
                                     scenario.is_intersection, scenario.behavior_label.value))
    K = k if k is not None else (predictions[0].k if predictions else 0)
    return aggregate(rows, K), rows


def evaluate(
    model: TrajectoryDiffusionModel,
    scenarios: Sequence[Scenario],
    sched: NoiseSchedule,
    k: int = 6,
    seed: int = 0,
    sigma_ep: float = 0.5,
    workers: int = 1,
    verbose: bool = False,
) -> Tuple[MetricsReport, List[ScenarioMetrics], List[PredictionSet]]:
    predictions = sample_dataset(model, scenarios, sched, k=k, seed=seed, sigma_ep=sigma_ep,
                                 workers=workers, verbose=verbose)
    report, rows = score_predictions(predictions, scenarios, k)
    return report, rows, predictions


def evaluate_checkpoint(path: Union[str, Path], scenarios: Sequence[Scenario], variant: Union[Variant, str],
                        k: int = 6, seed: int = 0, sigma_ep: Optional[float] = None, workers: int = 1,
                        verbose: bool = False):
    """
    Load a checkpoint and evaluate it

    Raises:
        ConfigError: the checkpoint was trained as a different variant
    """
    model, train_config, _ = load_checkpoint(path)
    requested = parse_variant(variant)
    if model.variant is not requested:
        raise ConfigError(f"checkpoint {path} holds a '{model.variant.value}' model, "
                          f"not '{requested.value}'")
    sched = build_schedule(train_config.T, train_config.schedule)
    sigma = train_config.sigma_ep if sigma_ep is None else sigma_ep
    return evaluate(model, scenarios, sched, k=k, seed=seed, sigma_ep=sigma, workers=workers, verbose=verbose)


def controllability(model: TrajectoryDiffusionModel, scenarios: Sequence[Scenario], sched: NoiseSchedule,
                    mode: Union[Behavior, str], k: int = 6, seed: int = 0) -> float:
    """Fraction of samples, drawn with every token set to `mode`, whose label matches `mode`"""
    mode = Behavior(mode)
    if model.token_kind != "mode":
        raise ConfigError(f"controllability needs a mode-token model, got '{model.variant.value}'")
    if not scenarios:
        raise InputError("controllability: no scenarios")
    hits = 0
    total = 0
    sampler = Sampler(model, sched)
    for i, scenario in enumerate(scenarios):
        pred = sampler.sample(scenario, k=k, mode=SampleMode.BEHAVIOR, rng=scenario_rng(seed, i),
                              tokens=[BehaviorToken(mode=mode)] * k)
        hits += sum(label_behavior(traj) is mode for traj in pred.samples)
        total += k
    return hits / total


def confidence_ranking(predictions: Sequence[PredictionSet], scenarios: Sequence[Scenario]) -> float:
    """
    Spearman correlation between final scores and -ADE, pooled over every sample

    Positive means higher-scored samples tend to be closer to the ground truth.
    NaN when either side is constant.

    Raises:
        InputError: no predictions, or a prediction has no matching scenario
    """
    if not predictions:
        raise InputError("confidence_ranking: no predictions")
    by_id = {s.scenario_id: s for s in scenarios}
    scores, errors = [], []
    for pred in predictions:
        scenario = by_id.get(pred.scenario_id)
        if scenario is None:
            raise InputError(f"prediction for unknown scenario '{pred.scenario_id}'")
        gt = scenario.future_gt[:pred.samples.shape[1]]
        scores.append(pred.confidences)
        errors.append(np.linalg.norm(pred.samples - gt, axis=-1).mean(axis=-1))
    scores = np.concatenate(scores)
    neg_ade = -np.concatenate(errors)
    if np.ptp(scores) == 0 or np.ptp(neg_ade) == 0:
        return float("nan")
    return float(stats.spearmanr(scores, neg_ade).correlation)


def classifier_report(model: TrajectoryDiffusionModel, scenarios: Sequence[Scenario],
                      batch_size: int = 64) -> ConfusionReport:
    """Mode-classifier accuracy, per-class precision/recall and the confusion matrix"""
    if not scenarios:
        raise InputError("classifier_report: no scenarios")
    predicted, actual = [], []
    with no_grad():
        for start in range(0, len(scenarios), batch_size):
            chunk = scenarios[start:start + batch_size]
            probs = model.classify(model.condition(collate_scenarios(chunk, model.config))).data
            predicted.extend(np.argmax(probs, axis=1).tolist())
            actual.extend(s.behavior_label.index for s in chunk)
    return confusion_matrix(predicted, actual)


# ==================== TRAINER ====================

@dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    total: float
    reg: float
    cls: float
    conf: float
    val_min_ade: Optional[float] = None


@dataclass
class TrainResult:
    model: TrajectoryDiffusionModel
    history: List[EpochRecord] = field(default_factory=list)
    best_val_min_ade: Optional[float] = None
    checkpoint_path: Optional[Path] = None
    best_checkpoint_path: Optional[Path] = None
    steps: int = 0


def best_checkpoint_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".best" + path.suffix)


def loss_curve_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".loss.csv")


class Trainer:
    """
    End-to-end trainer

    Usage:
        trainer = Trainer(model_config, train_config)
        result = trainer.train(train_scenarios, val_scenarios, checkpoint_path="runs/cdt.json")
    """

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig, verbose: bool = True):
        self.model_config = model_config.validate()
        self.train_config = train_config.validate()
        self.verbose = verbose
        self.model = TrajectoryDiffusionModel(model_config, train_config.variant, seed=train_config.seed)
        self.schedule = build_schedule(train_config.T, train_config.schedule)
        self.optimizer = AdamW(self.model.parameters(), weight_decay=train_config.weight_decay)
        self.rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 1]))
        self.step = 0
        self.best_val_min_ade: Optional[float] = None

    def log(self, message: str) -> None:
        if self.verbose:
            print(message)

    def lr_schedule(self, steps_per_epoch: int) -> LrSchedule:
        total = self.train_config.epochs * steps_per_epoch
        warmup = min(self.train_config.warmup_steps, max(1, total // 10))
        if warmup != self.train_config.warmup_steps:
            self.log(f"  Warmup shortened to {warmup} steps ({total} total steps)")
        return LrSchedule(total_steps=max(total, warmup + 1), base_lr=self.train_config.base_lr,
                          warmup_steps=warmup)

    def resume(self, checkpoint_path: Union[str, Path]) -> int:
        """
        Continue from a checkpoint written by train(): weights, optimizer
        moments, step count and best validation score. The data order after
        the restart differs from an uninterrupted run.

        Returns:
            Step count the training continues from

        Raises:
            ModelStateError: unreadable checkpoint or one without optimizer state
            ConfigError: checkpoint trained with another variant or model config
        """
        model, train_config, payload = load_checkpoint(checkpoint_path)
        if model.variant is not self.model.variant:
            raise ConfigError(f"{checkpoint_path} holds a {model.variant.value} model; "
                              f"cannot resume {self.model.variant.value} training from it")
        if model.config != self.model_config:
            raise ConfigError(f"{checkpoint_path} was trained with another model config")
        if train_config.T != self.train_config.T:
            raise ConfigError(f"{checkpoint_path} was trained with T={train_config.T}, not T={self.train_config.T}")
        self.model.load_state_dict(model.state_dict())
        restore_optimizer(self.optimizer, payload)
        self.step = int(payload["step"])
        self.best_val_min_ade = payload.get("best_val_min_ade")
        self.model.mark_ready()
        self.log(f"  Resuming from {checkpoint_path} at step {self.step}")
        return self.step

    def train_step(self, batch, lr: float) -> LossBreakdown:
        """
        One optimizer step on a collated batch

        The noise loss uses a random step t per sample. The confidence decoder
        instead scores the x0 estimate from that step re-noised to t=1, using
        denoiser features from a gradient-free pass at t=1, which is the step
        whose features rank samples at inference.
        """
        cfg = self.train_config
        model = self.model
        scale = self.model_config.position_scale
        B = batch.size

        cond = model.condition(batch)
        probs = model.classify(cond)
        cond = cond.with_behavior(model.behavior(model.training_tokens(batch, self.rng, cfg.sigma_ep)))

        t = self.rng.integers(1, self.schedule.T + 1, size=B)
        eps = self.rng.standard_normal(batch.future.shape)
        traj_t = q_sample(batch.future, t, eps, self.schedule).values
        eps_hat, _ = model.denoise_eps(Tensor(traj_t), t, cond)

        estimate = predict_x0(traj_t, t, eps_hat.data, self.schedule)
        target = confidence_target(estimate * scale, batch.future * scale, cfg.conf_tau)
        final_t = np.ones(B, dtype=np.int64)
        with no_grad():
            traj_1 = q_sample(estimate, final_t, eps, self.schedule).values
            _, final_features = model.denoise_eps(Tensor(traj_1), final_t, cond)
        scores = model.confidence(Tensor(final_features.data))

        loss, parts = total_loss(eps_hat, eps, probs, batch.labels, scores, target, cfg.gamma1, cfg.gamma2)
        self.optimizer.zero_grad()
        backward(loss)
        self.optimizer.step(lr)
        self.step += 1
        return parts

    def validate(self, val_scenarios: Sequence[Scenario]) -> float:
        cfg = self.train_config
        subset = list(val_scenarios)[:cfg.eval_scenarios]
        report, _, _ = evaluate(self.model, subset, self.schedule, k=cfg.eval_k, seed=cfg.seed,
                                sigma_ep=cfg.sigma_ep)
        return report.min_ade

    def train(
        self,
        scenarios: Sequence[Scenario],
        val_scenarios: Optional[Sequence[Scenario]] = None,
        checkpoint_path: Optional[Union[str, Path]] = None,
    ) -> TrainResult:
        """
        Train for cfg.epochs epochs

        Args:
            scenarios: Training scenarios
            val_scenarios: Optional held-out scenarios for best-checkpoint selection
            checkpoint_path: Final checkpoint path; the best one goes next to it
                             as <name>.best.json and the loss curve as <name>.loss.csv

        Raises:
            InputError: empty dataset
            NumericError: loss diverged (the last good weights are saved first)
        """
        if not scenarios:
            raise InputError("training dataset is empty")
        cfg = self.train_config
        features: List[ScenarioFeatures] = [featurize_scenario(s, self.model_config) for s in scenarios]
        n = len(features)
        steps_per_epoch = math.ceil(n / cfg.batch_size)
        schedule = self.lr_schedule(steps_per_epoch)
        start_epoch = self.step // steps_per_epoch + 1
        if start_epoch > cfg.epochs:
            raise ConfigError(f"step {self.step} already covers {cfg.epochs} epochs of {steps_per_epoch} steps; "
                              f"raise epochs to continue training")
        result = TrainResult(model=self.model, best_val_min_ade=self.best_val_min_ade)
        path = Path(checkpoint_path) if checkpoint_path else None
        best_path = best_checkpoint_path(path) if path else None
        last_good = self.model.state_dict()
        last_good_step = self.step

        self.log(f"  Training {cfg.variant.value} model: {n} scenarios, {cfg.epochs} epochs, "
                 f"T={cfg.T}, {self.model.num_parameters():,} parameters")

        for epoch in range(start_epoch, cfg.epochs + 1):
            order = self.rng.permutation(n)
            sums = np.zeros(4)
            batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
            bar = tqdm(batches, desc=f"Epoch {epoch}/{cfg.epochs}", disable=not self.verbose, leave=False)
            lr = schedule.lr_at(self.step)
            try:
                for index in bar:
                    lr = schedule.lr_at(self.step)
                    parts = self.train_step(collate([features[i] for i in index]), lr)
                    sums += [parts.total, parts.reg, parts.cls, parts.conf]
                    bar.set_postfix(loss=f"{parts.total:.4f}")
            except NumericError:
                self.model.load_state_dict(last_good)
                if path:
                    save_checkpoint(path, self.model, cfg, None, last_good_step, result.best_val_min_ade)
                    self.log(f"  Loss diverged in epoch {epoch}; last good weights saved to {path}")
                raise
            finally:
                bar.close()

            means = sums / len(batches)
            record = EpochRecord(epoch, self.step, lr, *[float(v) for v in means])
            last_good = self.model.state_dict()
            last_good_step = self.step
            self.model.mark_ready()

            if val_scenarios and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                record.val_min_ade = self.validate(val_scenarios)
                if result.best_val_min_ade is None or record.val_min_ade < result.best_val_min_ade:
                    result.best_val_min_ade = record.val_min_ade
                    if best_path:
                        save_checkpoint(best_path, self.model, cfg, self.optimizer, self.step,
                                        result.best_val_min_ade)
                        result.best_checkpoint_path = best_path

            result.history.append(record)
            val_text = f" val_min_ade={record.val_min_ade:.3f}" if record.val_min_ade is not None else ""
            self.log(f"  epoch {epoch:>4}  loss={record.total:.4f}  reg={record.reg:.4f}  "
                     f"cls={record.cls:.4f}  conf={record.conf:.4f}  lr={lr:.2e}{val_text}")

        result.steps = self.step
        if path:
            save_checkpoint(path, self.model, cfg, self.optimizer, self.step, result.best_val_min_ade)
            write_loss_curve(loss_curve_path(path), result.history)
            result.checkpoint_path = path
            self.log(f"  Saved checkpoint: {path}")
        return result


# ==================== ABLATION ====================

@dataclass
class AblationRow:
    steps: int
    epochs: int
    min_ade6: Optional[float]
    min_fde6: Optional[float]
    status: str


def run_ablation(
    plan: AblationPlan,
    train_scenarios: Sequence[Scenario],
    val_scenarios: Sequence[Scenario],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: Optional[Union[str, Path]] = None,
    k: int = 6,
    verbose: bool = True,
) -> List[AblationRow]:
    """
    Train and evaluate one model per denoising-step count (epochs = epochs_per_step x steps)

    Entries run sequentially with independent seeds; a failing entry becomes a
    'failed' row and the sweep continues.
    """
    plan.validate()
    if not val_scenarios:
        raise InputError("ablation needs validation scenarios")
    rows = []
    out_dir = Path(out_dir) if out_dir else None
    for i, (steps, epochs) in enumerate(plan.entries()):
        if verbose:
            print(f"\n  [{i + 1}/{len(plan.steps_list)}] T={steps}, epochs={epochs}")
        cfg = replace(train_config, T=steps, epochs=epochs, seed=train_config.seed + i, eval_every=epochs + 1)
        try:
            trainer = Trainer(model_config, cfg, verbose=verbose)
            ckpt = out_dir / f"ablation_T{steps}.json" if out_dir else None
            trainer.train(train_scenarios, checkpoint_path=ckpt)
            report, _, _ = evaluate(trainer.model, val_scenarios, trainer.schedule, k=k, seed=cfg.seed,
                                    sigma_ep=cfg.sigma_ep)
            rows.append(AblationRow(steps, epochs, report.min_ade, report.min_fde, "ok"))
        except (CDTError, FloatingPointError, ValueError) as e:
            if verbose:
                print(f"  Entry T={steps} failed: {type(e).__name__}: {e}")
            rows.append(AblationRow(steps, epochs, None, None, f"failed: {type(e).__name__}"))
    return rows
