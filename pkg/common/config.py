"""
Experiment configuration - dataset, model, training and ablation settings
Every default lives here; scripts only override
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .errors import ConfigError


# Default locations
DEFAULT_CACHE_DIR = Path(os.getenv("CDT_CACHE_DIR", Path(__file__).parent.parent / ".cache"))

# Dataset defaults (class mix from the real-world straight/left/right imbalance)
DEFAULT_CLASS_MIX = (0.817, 0.095, 0.088)
DEFAULT_INTERSECTION_FRACTION = 0.5
DEFAULT_OTHER_AGENTS = (2, 6)
DEFAULT_SPEED_RANGE = (5.0, 15.0)

# Model defaults
DEFAULT_EMBED_DIM = 64
DEFAULT_HEADS = 4
DEFAULT_DENOISER_BLOCKS = 6
DEFAULT_FFN_MULT = 4
DEFAULT_POSITION_SCALE = 30.0  # meters per normalized unit

# Training defaults
DEFAULT_EPOCHS = 140
DEFAULT_BATCH_SIZE = 64
DEFAULT_BASE_LR = 5e-4
DEFAULT_WARMUP_STEPS = 1500
DEFAULT_WEIGHT_DECAY = 1e-2
DEFAULT_DIFFUSION_STEPS = 20
DEFAULT_GAMMA1 = 1.0
DEFAULT_GAMMA2 = 0.5
DEFAULT_SIGMA_EP = 0.5
DEFAULT_CONF_TAU = 2.0

# Ablation defaults
DEFAULT_ABLATION_STEPS = (5, 10, 20, 32, 50, 100)
DEFAULT_EPOCHS_PER_STEP = 7


class Variant(str, Enum):
    """Model variants: which behavior token is used and whether the map is encoded"""
    BASELINE = "baseline"
    BEHAVIOR = "behavior"
    ENDPOINT = "endpoint"
    NOMAP = "nomap"

    @property
    def token_kind(self) -> str:
        if self is Variant.BASELINE:
            return "none"
        if self is Variant.ENDPOINT:
            return "endpoint"
        return "mode"

    @property
    def uses_map(self) -> bool:
        return self is not Variant.NOMAP


def parse_variant(value: Any) -> Variant:
    """Accept enum members or their string names"""
    if isinstance(value, Variant):
        return value
    try:
        return Variant(str(value).lower())
    except ValueError:
        options = ", ".join(v.value for v in Variant)
        raise ConfigError(f"unknown variant '{value}' (expected one of: {options})")


def _check_keys(cls, data: Dict, section: str) -> None:
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in '{section}' config")


@dataclass
class DatasetConfig:
    n_scenarios: int = 1000
    class_mix: Tuple[float, float, float] = DEFAULT_CLASS_MIX
    intersection_fraction: float = DEFAULT_INTERSECTION_FRACTION
    n_other_agents: Tuple[int, int] = DEFAULT_OTHER_AGENTS
    speed_range: Tuple[float, float] = DEFAULT_SPEED_RANGE
    rng_seed: int = 0

    def validate(self) -> "DatasetConfig":
        if self.n_scenarios < 0:
            raise ConfigError(f"n_scenarios must be >= 0, got {self.n_scenarios}")
        if len(self.class_mix) != 3 or any(p < 0 for p in self.class_mix):
            raise ConfigError(f"class_mix must be 3 non-negative probabilities, got {self.class_mix}")
        if not math.isclose(sum(self.class_mix), 1.0, abs_tol=1e-6):
            raise ConfigError(f"class_mix must sum to 1, got {sum(self.class_mix):.6f}")
        if not 0.0 <= self.intersection_fraction <= 1.0:
            raise ConfigError(f"intersection_fraction must be in [0, 1], got {self.intersection_fraction}")
        lo, hi = self.n_other_agents
        if lo < 0 or hi < lo:
            raise ConfigError(f"n_other_agents must be a range 0 <= lo <= hi, got {self.n_other_agents}")
        vlo, vhi = self.speed_range
        if vlo <= 0 or vhi < vlo:
            raise ConfigError(f"speed_range must satisfy 0 < lo <= hi, got {self.speed_range}")
        return self

    @classmethod
    def from_dict(cls, data: Dict) -> "DatasetConfig":
        _check_keys(cls, data, "dataset")
        data = dict(data)
        for key in ("class_mix", "n_other_agents", "speed_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data).validate()

    def to_dict(self) -> Dict:
        return asdict(self)

    def fingerprint(self) -> str:
        """Short stable hash of the generator settings (dataset cache key)"""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]


@dataclass
class ModelConfig:
    embed_dim: int = DEFAULT_EMBED_DIM
    heads: int = DEFAULT_HEADS
    denoiser_blocks: int = DEFAULT_DENOISER_BLOCKS
    ffn_mult: int = DEFAULT_FFN_MULT
    conv_kernel: int = 3
    horizon: int = 60
    history: int = 50
    position_scale: float = DEFAULT_POSITION_SCALE
    max_segment_points: int = 11

    def validate(self) -> "ModelConfig":
        for name in ("embed_dim", "heads", "denoiser_blocks", "ffn_mult", "conv_kernel", "horizon", "history"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.position_scale <= 0:
            raise ConfigError(f"position_scale must be > 0, got {self.position_scale}")
        if self.max_segment_points < 2:
            raise ConfigError(f"max_segment_points must be >= 2, got {self.max_segment_points}")
        return self

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        _check_keys(cls, data, "model")
        return cls(**data).validate()

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    base_lr: float = DEFAULT_BASE_LR
    warmup_steps: int = DEFAULT_WARMUP_STEPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    gamma1: float = DEFAULT_GAMMA1
    gamma2: float = DEFAULT_GAMMA2
    T: int = DEFAULT_DIFFUSION_STEPS
    schedule: str = "linear"
    variant: Variant = Variant.BEHAVIOR
    seed: int = 0
    sigma_ep: float = DEFAULT_SIGMA_EP
    conf_tau: float = DEFAULT_CONF_TAU
    val_fraction: float = 0.1
    eval_every: int = 10
    eval_scenarios: int = 64
    eval_k: int = 6

    def validate(self) -> "TrainConfig":
        self.variant = parse_variant(self.variant)
        for name in ("epochs", "batch_size", "T", "eval_every", "eval_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError(f"gamma weights must be >= 0, got ({self.gamma1}, {self.gamma2})")
        if self.schedule not in ("linear", "cosine"):
            raise ConfigError(f"schedule must be 'linear' or 'cosine', got '{self.schedule}'")
        if self.sigma_ep < 0 or self.conf_tau <= 0:
            raise ConfigError("sigma_ep must be >= 0 and conf_tau > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        return self

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        _check_keys(cls, data, "train")
        return cls(**data).validate()

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["variant"] = parse_variant(self.variant).value
        return data


@dataclass
class AblationPlan:
    steps_list: List[int] = field(default_factory=lambda: list(DEFAULT_ABLATION_STEPS))
    epochs_per_step: int = DEFAULT_EPOCHS_PER_STEP

    def validate(self) -> "AblationPlan":
        if not self.steps_list or any(s < 1 for s in self.steps_list):
            raise ConfigError(f"steps_list must be non-empty positive ints, got {self.steps_list}")
        if self.epochs_per_step < 1:
            raise ConfigError(f"epochs_per_step must be >= 1, got {self.epochs_per_step}")
        return self

    def epochs_for(self, steps: int) -> int:
        """Epoch budget scales with the chain length (7 x steps by default)"""
        return self.epochs_per_step * steps

    def entries(self) -> List[Tuple[int, int]]:
        return [(s, self.epochs_for(s)) for s in self.steps_list]

    @classmethod
    def from_dict(cls, data: Dict) -> "AblationPlan":
        _check_keys(cls, data, "ablation")
        return cls(**data).validate()

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationPlan = field(default_factory=AblationPlan)

    def to_dict(self) -> Dict:
        return {
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "ablation": self.ablation.to_dict(),
        }


# Named presets: "desk" keeps the full-size defaults, "tiny" is for fast tests
PRESETS: Dict[str, Dict] = {
    "desk": {},
    "tiny": {
        "dataset": {"n_scenarios": 64, "class_mix": [0.34, 0.33, 0.33]},
        "model": {"embed_dim": 16, "heads": 4, "denoiser_blocks": 1, "ffn_mult": 2},
        "train": {"epochs": 2, "batch_size": 16, "warmup_steps": 4, "T": 5,
                  "eval_every": 1, "eval_scenarios": 4},
        "ablation": {"steps_list": [5, 10, 20], "epochs_per_step": 1},
    },
}


def experiment_from_dict(data: Dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a plain dict"""
    for key in data:
        if key not in ("dataset", "model", "train", "ablation"):
            raise ConfigError(f"unknown top-level config key '{key}'")
    return ExperimentConfig(
        dataset=DatasetConfig.from_dict(data.get("dataset", {})),
        model=ModelConfig.from_dict(data.get("model", {})),
        train=TrainConfig.from_dict(data.get("train", {})),
        ablation=AblationPlan.from_dict(data.get("ablation", {})),
    )


def load_config(path: Optional[str] = None, preset: Optional[str] = None) -> ExperimentConfig:
    """
    Load an experiment config

    Args:
        path: JSON file with optional 'dataset', 'model', 'train', 'ablation' sections
        preset: Named preset applied first ('desk' or 'tiny'); file values override it

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: unreadable file, bad JSON or invalid values
    """
    merged: Dict[str, Dict] = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (expected one of: {', '.join(PRESETS)})")
        merged = {k: dict(v) for k, v in PRESETS[preset].items()}

    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        for section, values in data.items():
            if not isinstance(values, dict):
                raise ConfigError(f"config section '{section}' must be an object")
            merged.setdefault(section, {}).update(values)

    return experiment_from_dict(merged)
