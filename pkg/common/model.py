"""
Trajectory diffusion model - condition encoder, behavior encoder, denoiser
and the two heads behind one object
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import ModelConfig, Variant, parse_variant
from .diffusion import BehaviorEncoder, BehaviorToken, Denoiser
from .encoder import ConditionEncoder, ConditionSet, SceneBatch
from .errors import InputError
from .heads import ConfidenceDecoder, ModeClassifier
from .ndiff import Module, Tensor
from .scene import BEHAVIORS


class TrajectoryDiffusionModel(Module):
    """
    Conditional trajectory generator

    Usage:
        model = TrajectoryDiffusionModel(ModelConfig(), Variant.BEHAVIOR, seed=0)
        cond = model.condition(batch)
        eps_hat, features = model.denoise_eps(traj_t, t, cond.with_behavior(model.behavior(tokens)))
    """

    def __init__(self, config: ModelConfig, variant: Variant = Variant.BEHAVIOR, seed: int = 0):
        config.validate()
        rng = np.random.default_rng(seed)
        D = config.embed_dim
        self.config = config
        self.variant = parse_variant(variant)
        self.seed = seed
        self.encoder = ConditionEncoder(config, rng, use_map=self.variant.uses_map)
        self.behavior_encoder = BehaviorEncoder(D, config.position_scale, rng)
        self.denoiser = Denoiser(config, rng)
        self.classifier = ModeClassifier(D, config.heads, rng)
        self.confidence_decoder = ConfidenceDecoder(D, rng)
        self.ready = False
        self.parameters()  # assign parameter names

    @property
    def token_kind(self) -> str:
        return self.variant.token_kind

    def mark_ready(self) -> "TrajectoryDiffusionModel":
        """Flag the weights as usable for sampling (set after training or loading)"""
        self.ready = True
        return self

    def condition(self, batch: SceneBatch) -> ConditionSet:
        return self.encoder(batch)

    def classify(self, cond: ConditionSet) -> Tensor:
        return self.classifier(cond)

    def behavior(self, tokens: Sequence[BehaviorToken]) -> Optional[Tensor]:
        if self.token_kind == "none":
            return None
        return self.behavior_encoder(tokens)

    def denoise_eps(self, traj_t: Tensor, t, cond: ConditionSet) -> Tuple[Tensor, Tensor]:
        """Noise estimate and last-layer features for (B, H, 2) noisy trajectories at steps t"""
        if traj_t.shape[1:] != (self.config.horizon, 2):
            raise InputError(f"expected (B, {self.config.horizon}, 2) trajectories, got {traj_t.shape}")
        return self.denoiser(traj_t, cond.with_step(self.denoiser.embed_step(t)))

    def confidence(self, features: Tensor) -> Tensor:
        return self.confidence_decoder(features)

    def training_tokens(self, batch: SceneBatch, rng: np.random.Generator, sigma_ep: float) -> List[BehaviorToken]:
        """Training tokens: the ground-truth label, or the noisy ground-truth endpoint"""
        if self.token_kind == "mode":
            return [BehaviorToken(mode=BEHAVIORS[int(label)]) for label in batch.labels]
        if self.token_kind == "endpoint":
            noise = rng.normal(0.0, sigma_ep, size=batch.endpoints.shape) if sigma_ep > 0 else 0.0
            return [BehaviorToken(endpoint=p) for p in batch.endpoints + noise]
        return [BehaviorToken() for _ in batch.ids]
