"""
Conditional diffusion - noise schedule, forward corruption, transformer
denoiser, reverse sampling and the behavior-token sampling policy
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ModelConfig
from .encoder import ConditionSet, collate_scenarios
from .errors import ConfigError, ModelStateError, UsageError
from .heads import final_score, rank_predictions
from .ndiff import (Conv1dTemporal, FeedForward, LayerNorm, Linear, MLP, Module, MultiHeadAttention,
                    Param, Tensor, gelu, no_grad)
from .scene import BEHAVIORS, Behavior, Scenario


DEFAULT_BETA_RANGE = (1e-4, 0.02)   # conventional 1000-step range, rescaled by 1000 / T
MAX_BETA = 0.999


# ==================== NOISE SCHEDULE ====================

@dataclass
class NoiseSchedule:
    """
    Diffusion constants indexed 0..T; index 0 is the clean-data sentinel
    (beta 0, alpha_bar 1) so that alpha_bar[t] = alpha_bar[t-1] * alpha[t] for t >= 1
    """
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray
    kind: str = "linear"


def schedule_from_betas(betas: Sequence[float], kind: str = "custom") -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) < 1:
        raise ConfigError("schedule needs at least one beta")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ConfigError("every beta must lie in (0, 1)")
    T = len(betas)
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.ones(T + 1)
    for t in range(1, T + 1):
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t]
    posterior_var = np.zeros(T + 1)
    posterior_var[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    return NoiseSchedule(T, beta, alpha, alpha_bar, posterior_var, kind)


def build_schedule(T: int, kind: str = "linear", beta_range: Optional[Tuple[float, float]] = None) -> NoiseSchedule:
    """
    Build a T-step schedule

    linear: betas evenly spaced over beta_range; by default the conventional
        [1e-4, 0.02] range for 1000 steps scaled by 1000/T, clipped below 0.999
    cosine: squared-cosine alpha_bar curve, betas clipped at 0.999

    Raises:
        ConfigError: T < 1 or unknown kind
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ConfigError(f"T must be an integer >= 1, got {T}")
    if kind == "linear":
        lo, hi = beta_range or (DEFAULT_BETA_RANGE[0] * 1000.0 / T, DEFAULT_BETA_RANGE[1] * 1000.0 / T)
        betas = np.minimum(np.linspace(lo, hi, T), MAX_BETA)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.minimum(1.0 - f[1:] / f[:-1], MAX_BETA)
    else:
        raise ConfigError(f"unknown schedule kind '{kind}' (expected 'linear' or 'cosine')")
    return schedule_from_betas(betas, kind)


# ==================== FORWARD PROCESS ====================

@dataclass
class NoisyTrajectory:
    values: np.ndarray   # (..., H, 2) normalized units
    t: Union[int, np.ndarray]


def _check_steps(t, sched: NoiseSchedule) -> np.ndarray:
    steps = np.asarray(t)
    if steps.dtype.kind not in "iu" or np.any(steps < 1) or np.any(steps > sched.T):
        raise UsageError(f"diffusion step must be an integer in [1, {sched.T}], got {t}")
    return steps


def _per_sample(coef: np.ndarray, ndim: int) -> np.ndarray:
    """Broadcast per-sample coefficients over the trailing trajectory axes"""
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def q_sample(traj0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> NoisyTrajectory:
    """Closed-form forward marginal: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps"""
    steps = _check_steps(t, sched)
    traj0 = np.asarray(traj0, dtype=np.float64)
    abar = _per_sample(sched.alpha_bar[steps], traj0.ndim)
    values = np.sqrt(abar) * traj0 + np.sqrt(1.0 - abar) * np.asarray(eps)
    return NoisyTrajectory(values, t)


def q_step(traj_prev: np.ndarray, t: int, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Single forward kernel q(x_t | x_{t-1}) = N(sqrt(alpha_t) x_{t-1}, beta_t I)"""
    _check_steps(t, sched)
    return math.sqrt(sched.alpha[t]) * traj_prev + math.sqrt(sched.beta[t]) * noise


def predict_x0(traj_t: np.ndarray, t, eps_hat: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Invert the forward marginal given a noise estimate"""
    steps = _check_steps(t, sched)
    abar = _per_sample(sched.alpha_bar[steps], np.ndim(traj_t))
    return (traj_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)


def reverse_step(traj_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule,
                 noise: Optional[np.ndarray] = None) -> np.ndarray:
    """
    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z

    sigma_t^2 is the posterior variance; no noise is added at t = 1.
    """
    _check_steps(t, sched)
    mean = (traj_t - sched.beta[t] / math.sqrt(1.0 - sched.alpha_bar[t]) * eps_hat) / math.sqrt(sched.alpha[t])
    if t == 1 or noise is None:
        return mean
    return mean + math.sqrt(sched.posterior_var[t]) * noise


def normalize(traj: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(traj, dtype=np.float64) / scale


def denormalize(traj: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(traj, dtype=np.float64) * scale


# ==================== EMBEDDINGS ====================

def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """(B, dim) sinusoidal embedding of integer diffusion steps"""
    steps = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = steps[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(steps), 1))], axis=1)
    return emb


@dataclass
class BehaviorToken:
    """Exactly one of: a driving mode, a focal-frame endpoint (meters), or nothing"""
    mode: Optional[Behavior] = None
    endpoint: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode is not None and self.endpoint is not None:
            raise UsageError("behavior token takes a mode or an endpoint, not both")
        if self.mode is not None:
            self.mode = Behavior(self.mode)
        if self.endpoint is not None:
            self.endpoint = np.asarray(self.endpoint, dtype=np.float64).reshape(2)

    @property
    def variant(self) -> str:
        if self.mode is not None:
            return "mode"
        if self.endpoint is not None:
            return "endpoint"
        return "none"

    def to_json(self):
        if self.mode is not None:
            return self.mode.value
        if self.endpoint is not None:
            return [round(float(v), 6) for v in self.endpoint]
        return None


class BehaviorEncoder(Module):
    """MLP embeddings for mode tokens (one-hot) and endpoint tokens"""

    def __init__(self, dim: int, position_scale: float, rng: np.random.Generator):
        self.position_scale = position_scale
        self.mode_mlp = MLP([len(BEHAVIORS), dim, dim], rng)
        self.endpoint_mlp = MLP([2, dim, dim], rng)

    def __call__(self, tokens: Sequence[BehaviorToken]) -> Optional[Tensor]:
        kinds = {tok.variant for tok in tokens}
        if kinds == {"none"}:
            return None
        if len(kinds) != 1:
            raise UsageError(f"a batch must use one token variant, got {sorted(kinds)}")
        if kinds == {"mode"}:
            onehot = np.zeros((len(tokens), len(BEHAVIORS)))
            onehot[np.arange(len(tokens)), [tok.mode.index for tok in tokens]] = 1.0
            return self.mode_mlp(Tensor(onehot))
        points = np.stack([tok.endpoint for tok in tokens]) / self.position_scale
        return self.endpoint_mlp(Tensor(points))


# ==================== DENOISER ====================

class DenoiserBlock(Module):
    """Temporal conv, cross-attention over condition tokens, feed-forward (pre-norm residuals)"""

    def __init__(self, dim: int, heads: int, ffn_mult: int, kernel: int, rng: np.random.Generator):
        self.norm_conv = LayerNorm(dim)
        self.conv = Conv1dTemporal(dim, dim, kernel, rng)
        self.norm_cross = LayerNorm(dim)
        self.cross = MultiHeadAttention(dim, heads, rng)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult, rng)

    def __call__(self, x: Tensor, context: Tensor, context_mask: np.ndarray) -> Tensor:
        x = x + gelu(self.conv(self.norm_conv(x)))
        x = x + self.cross(self.norm_cross(x), context, key_mask=context_mask)
        return x + self.ffn(self.norm_ffn(x))


class Denoiser(Module):
    """Predicts the injected noise for a (B, H, 2) noisy trajectory"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D = cfg.embed_dim
        self.dim = D
        self.horizon = cfg.horizon
        self.in_proj = Linear(2, D, rng)
        self.time_pos = Param(rng.normal(0.0, 0.02, size=(cfg.horizon, D)))
        self.step_mlp = MLP([D, D, D], rng)
        self.blocks = [DenoiserBlock(D, cfg.heads, cfg.ffn_mult, cfg.conv_kernel, rng)
                       for _ in range(cfg.denoiser_blocks)]
        self.norm_self = LayerNorm(D)
        self.self_attn = MultiHeadAttention(D, cfg.heads, rng)
        self.norm_out = LayerNorm(D)
        self.out_proj = Linear(D, 2, rng)

    def embed_step(self, t) -> Tensor:
        return self.step_mlp(Tensor(sinusoidal_embedding(t, self.dim)))

    def __call__(self, traj_t: Tensor, cond: ConditionSet) -> Tuple[Tensor, Tensor]:
        """
        Returns:
            (eps_hat (B, H, 2), features (B, H, D) from the last layer)
        """
        context, context_mask = cond.context()
        B = traj_t.shape[0]
        x = self.in_proj(traj_t) + self.time_pos + cond.step_embedding.reshape(B, 1, self.dim)
        for block in self.blocks:
            x = block(x, context, context_mask)
        h = self.norm_self(x)
        x = x + self.self_attn(h, h)
        features = self.norm_out(x)
        return self.out_proj(features), features


# ==================== SAMPLING POLICY ====================

class SampleMode(str, Enum):
    BASELINE = "baseline"
    BEHAVIOR = "behavior"
    ENDPOINT = "endpoint"


TOKEN_KIND_FOR_MODE = {SampleMode.BASELINE: "none", SampleMode.BEHAVIOR: "mode", SampleMode.ENDPOINT: "endpoint"}


@dataclass
class PredictionSet:
    scenario_id: str
    samples: np.ndarray          # (K, H, 2) meters
    confidences: np.ndarray      # (K,) final scores
    decoder_scores: np.ndarray   # (K,)
    mode_probs: np.ndarray       # (3,) in BEHAVIORS order
    tokens: List[BehaviorToken] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.samples)


def endpoint_source(scenario: Scenario, sigma_ep: float, rng: np.random.Generator,
                    horizon: Optional[int] = None) -> np.ndarray:
    """Ground-truth position at the horizon plus isotropic Gaussian noise (stand-in endpoint predictor)"""
    index = -1 if horizon is None else horizon - 1
    end = np.asarray(scenario.future_gt[index], dtype=np.float64)
    if sigma_ep == 0:
        return end.copy()
    return end + rng.normal(0.0, sigma_ep, size=2)


def plan_tokens(mode: SampleMode, k: int, is_intersection: bool, mode_probs: np.ndarray,
                endpoint: Optional[np.ndarray] = None) -> List[BehaviorToken]:
    """
    Tokens for K samples

    Baseline: no token. Behavior: at intersections an even split over
    left/straight/right (two each for K=6), elsewhere K copies of the
    classifier's argmax mode. Endpoint: K copies of the endpoint.
    """
    if mode is SampleMode.BASELINE:
        return [BehaviorToken() for _ in range(k)]
    if mode is SampleMode.ENDPOINT:
        if endpoint is None:
            raise UsageError("endpoint sampling needs an endpoint")
        return [BehaviorToken(endpoint=endpoint) for _ in range(k)]
    if is_intersection:
        order = (Behavior.LEFT, Behavior.STRAIGHT, Behavior.RIGHT)
        return [BehaviorToken(mode=order[i * len(order) // k]) for i in range(k)]
    best = BEHAVIORS[int(np.argmax(mode_probs))]
    return [BehaviorToken(mode=best) for _ in range(k)]


def p_sample_step(model, traj_t: np.ndarray, t: int, cond: ConditionSet, sched: NoiseSchedule,
                  rng: np.random.Generator) -> Tuple[np.ndarray, Tensor]:
    """One reverse step through the denoiser; returns (x_{t-1}, denoiser features)"""
    k = traj_t.shape[0]
    eps_hat, features = model.denoise_eps(Tensor(traj_t), np.full(k, t), cond)
    noise = rng.standard_normal(traj_t.shape) if t > 1 else None
    return reverse_step(traj_t, t, eps_hat.data, sched, noise), features


class Sampler:
    """
    Runs the reverse chain for one scenario at a time

    The encoder runs once per scenario; the K chains share the condition set
    and run T reverse steps each, so one call costs K x T denoiser evaluations.
    Samples come back best first by final score; ties keep the token order.
    """

    def __init__(self, model, sched: NoiseSchedule):
        self.model = model
        self.sched = sched
        self.encoder_calls = 0
        self.denoiser_evaluations = 0

    def reset_counters(self) -> None:
        self.encoder_calls = 0
        self.denoiser_evaluations = 0

    def sample(self, scenario: Scenario, k: int = 6, mode: SampleMode = SampleMode.BASELINE,
               rng: Optional[np.random.Generator] = None, endpoint: Optional[np.ndarray] = None,
               sigma_ep: float = 0.5, tokens: Optional[Sequence[BehaviorToken]] = None) -> PredictionSet:
        """
        Draw K trajectories for one scenario

        Raises:
            ModelStateError: model weights not trained/loaded
            ConfigError: sampling mode does not match the model's token kind
        """
        model = self.model
        if not getattr(model, "ready", False):
            raise ModelStateError("model weights are not loaded; train or load a checkpoint first")
        mode = SampleMode(mode)
        if TOKEN_KIND_FOR_MODE[mode] != model.token_kind:
            raise ConfigError(f"sampling mode '{mode.value}' does not match a model trained with "
                              f"'{model.token_kind}' tokens")
        if k < 1:
            raise UsageError(f"k must be >= 1, got {k}")
        rng = rng or np.random.default_rng(0)
        cfg = model.config
        with no_grad():
            cond = model.condition(collate_scenarios([scenario], cfg))
            self.encoder_calls += 1
            mode_probs = model.classify(cond).data[0]
            if tokens is None:
                if mode is SampleMode.ENDPOINT and endpoint is None:
                    endpoint = endpoint_source(scenario, sigma_ep, rng, cfg.horizon)
                tokens = plan_tokens(mode, k, scenario.is_intersection, mode_probs, endpoint)
            tokens = list(tokens)
            if len(tokens) != k:
                raise UsageError(f"expected {k} tokens, got {len(tokens)}")
            cond_k = cond.repeat(k).with_behavior(model.behavior(tokens))
            x = rng.standard_normal((k, cfg.horizon, 2))
            features = None
            for t in range(self.sched.T, 0, -1):
                x, features = p_sample_step(model, x, t, cond_k, self.sched, rng)
                self.denoiser_evaluations += k
            decoder_scores = model.confidence(features).data
        chosen = [tok.mode.index if tok.mode is not None else int(np.argmax(mode_probs)) for tok in tokens]
        scores = final_score(mode_probs, decoder_scores, chosen)
        order = rank_predictions(scores)
        return PredictionSet(
            scenario_id=scenario.scenario_id,
            samples=denormalize(x[order], cfg.position_scale),
            confidences=scores[order],
            decoder_scores=decoder_scores[order],
            mode_probs=mode_probs,
            tokens=[tokens[i] for i in order],
        )


def sample(model, scenario: Scenario, sched: NoiseSchedule, k: int = 6,
           mode: SampleMode = SampleMode.BASELINE, rng: Optional[np.random.Generator] = None,
           endpoint: Optional[np.ndarray] = None, sigma_ep: float = 0.5,
           tokens: Optional[Sequence[BehaviorToken]] = None) -> PredictionSet:
    return Sampler(model, sched).sample(scenario, k, mode, rng, endpoint, sigma_ep, tokens)
