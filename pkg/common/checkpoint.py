"""
Checkpoints - JSON model/optimizer snapshots
Float64 values are written with repr precision, so save/load is lossless;
the payload holds no timestamps, so equal weights give equal bytes
"""

import json
import os
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .config import ModelConfig, TrainConfig, parse_variant
from .errors import ModelStateError
from .model import TrajectoryDiffusionModel
from .ndiff import AdamW


CHECKPOINT_FORMAT = "cdt-checkpoint"
CHECKPOINT_VERSION = 1


def _pack(arrays: Dict[str, np.ndarray]) -> Dict:
    return {name: {"shape": list(a.shape), "values": np.asarray(a, dtype=np.float64).ravel().tolist()}
            for name, a in arrays.items()}


def _unpack(packed: Dict) -> Dict[str, np.ndarray]:
    try:
        return {name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
                for name, entry in packed.items()}
    except (KeyError, TypeError, ValueError) as e:
        raise ModelStateError(f"malformed tensor entry in checkpoint: {e}")


def save_checkpoint(
    path: Union[str, Path],
    model: TrajectoryDiffusionModel,
    train_config: TrainConfig,
    optimizer: Optional[AdamW] = None,
    step: int = 0,
    best_val_min_ade: Optional[float] = None,
) -> Path:
    """
    Write a checkpoint atomically (temp file + rename)

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict(),
        "variant": model.variant.value,
        "model_seed": model.seed,
        "step": int(step),
        "params": _pack(model.state_dict()),
        "optimizer": None,
        "best_val_min_ade": best_val_min_ade,
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        payload["optimizer"] = {"step": state["step"], "m": _pack(state["m"]), "v": _pack(state["v"])}

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    os.replace(tmp, path)
    return path


def read_checkpoint(path: Union[str, Path]) -> Dict:
    """Raw checkpoint payload after format/version checks"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise ModelStateError(f"cannot read checkpoint {path}: {e}")
    except json.JSONDecodeError as e:
        raise ModelStateError(f"checkpoint {path} is not valid JSON: {e}")
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ModelStateError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ModelStateError(f"unsupported checkpoint version {payload.get('version')} "
                              f"(expected {CHECKPOINT_VERSION})")
    return payload


def load_checkpoint(path: Union[str, Path]) -> Tuple[TrajectoryDiffusionModel, TrainConfig, Dict]:
    """
    Rebuild the model from a checkpoint

    Returns:
        (ready model, train config, payload) - the payload still holds the
        optimizer state for resuming

    Raises:
        ModelStateError: unreadable file, wrong format/version or mismatched tensors
    """
    payload = read_checkpoint(path)
    model_config = ModelConfig.from_dict(payload["model_config"])
    train_config = TrainConfig.from_dict(payload["train_config"])
    model = TrajectoryDiffusionModel(model_config, parse_variant(payload["variant"]),
                                     seed=payload.get("model_seed", 0))
    model.load_state_dict(_unpack(payload["params"]))
    return model.mark_ready(), train_config, payload


def restore_optimizer(optimizer: AdamW, payload: Dict) -> None:
    state = payload.get("optimizer")
    if not state:
        raise ModelStateError("checkpoint has no optimizer state")
    optimizer.load_state_dict({"step": state["step"], "m": _unpack(state["m"]), "v": _unpack(state["v"])})
