"""
Common modules for the conditional diffusion trajectory predictor
Reusable components shared by every script
"""

import os

# BLAS thread count must be fixed before numpy is first imported
_threads = os.getenv("CDT_NUM_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

from .errors import CDTError, ConfigError, format_cli_error
from .config import ExperimentConfig, ModelConfig, TrainConfig, DatasetConfig, AblationPlan, Variant, load_config
from .scene import Scenario, Behavior, generate_dataset, read_dataset, write_dataset, split_dataset, dataset_summary
from .diffusion import NoiseSchedule, Sampler, SampleMode, PredictionSet, build_schedule, sample
from .model import TrajectoryDiffusionModel
from .metrics import MetricsReport, aggregate, scenario_metrics
from .checkpoint import save_checkpoint, load_checkpoint
from .trainer import Trainer, evaluate, evaluate_checkpoint, run_ablation, controllability, classifier_report, confidence_ranking

__all__ = [
    'CDTError',
    'ConfigError',
    'format_cli_error',
    'ExperimentConfig',
    'ModelConfig',
    'TrainConfig',
    'DatasetConfig',
    'AblationPlan',
    'Variant',
    'load_config',
    'Scenario',
    'Behavior',
    'generate_dataset',
    'read_dataset',
    'write_dataset',
    'split_dataset',
    'dataset_summary',
    'NoiseSchedule',
    'Sampler',
    'SampleMode',
    'PredictionSet',
    'build_schedule',
    'sample',
    'TrajectoryDiffusionModel',
    'MetricsReport',
    'aggregate',
    'scenario_metrics',
    'save_checkpoint',
    'load_checkpoint',
    'Trainer',
    'evaluate',
    'evaluate_checkpoint',
    'run_ablation',
    'controllability',
    'classifier_report',
    'confidence_ranking',
]
