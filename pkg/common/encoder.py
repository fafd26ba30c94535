"""
Condition encoder - agent and lane tokens fused by cross-attention

Agents: per-step features -> MLP -> GRU over valid steps -> one token each.
Lanes: polylines split into short segments -> point self-attention + FFN ->
mean pool -> one token per segment.
Fusion: agents attend to lanes (A-L), lanes attend to agents (L-A), then A-L again.
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .errors import AssemblyError, InputError
from .ndiff import (GRUCell, LayerNorm, MLP, Module, MultiHeadAttention, FeedForward, Tensor,
                    concat, no_grad, take, tsum, where)
from .scene import AgentHistory, LanePolyline, Scenario


AGENT_FEATURES = 6   # x, y, dx, dy, sin(heading), cos(heading)
LANE_FEATURES = 4    # x, y, ux, uy


# ==================== FEATURIZATION ====================

def agent_features(agent: AgentHistory, scale: float) -> np.ndarray:
    """(steps, 6) features; displacement only where the previous step is also valid"""
    pos = agent.positions
    mask = agent.valid_mask
    disp = np.zeros_like(pos)
    both = mask[1:] & mask[:-1]
    disp[1:][both] = pos[1:][both] - pos[:-1][both]
    norm = np.hypot(disp[:, 0], disp[:, 1])
    moving = norm > 1e-9
    sin_h = np.where(moving, disp[:, 1] / np.where(moving, norm, 1.0), 0.0)
    cos_h = np.where(moving, disp[:, 0] / np.where(moving, norm, 1.0), 0.0)
    feats = np.stack([pos[:, 0] / scale, pos[:, 1] / scale, disp[:, 0], disp[:, 1], sin_h, cos_h], axis=1)
    feats[~mask] = 0.0
    return feats


def split_lane(points: np.ndarray, max_points: int) -> List[np.ndarray]:
    """Consecutive segments of at most max_points points sharing their end points"""
    step = max_points - 1
    segments = []
    for start in range(0, len(points) - 1, step):
        segments.append(points[start:start + max_points])
    return segments


def lane_features(points: np.ndarray, scale: float) -> np.ndarray:
    """(points, 4) features: position and unit direction of the outgoing segment"""
    seg = np.diff(points, axis=0)
    seg = seg / np.hypot(seg[:, 0], seg[:, 1])[:, None]
    direction = np.vstack([seg, seg[-1:]])
    return np.concatenate([points / scale, direction], axis=1)


@dataclass
class ScenarioFeatures:
    scenario_id: str
    agent_feats: np.ndarray      # (Na, steps, 6)
    agent_mask: np.ndarray       # (Na, steps)
    lane_feats: np.ndarray       # (Ns, P, 4)
    lane_mask: np.ndarray        # (Ns, P)
    future: Optional[np.ndarray]  # (H, 2) normalized
    label: int
    endpoint: Optional[np.ndarray]  # (2,) meters
    is_intersection: bool


def featurize_agents(agents: Sequence[AgentHistory], cfg: ModelConfig):
    if not agents:
        raise InputError("encode_agents: empty agent list")
    feats, masks = [], []
    for a in agents:
        if a.positions.shape != (cfg.history, 2) or a.valid_mask.shape != (cfg.history,):
            raise InputError(f"agent {a.agent_id}: expected {cfg.history} steps, got {a.positions.shape}")
        feats.append(agent_features(a, cfg.position_scale))
        masks.append(a.valid_mask)
    return np.stack(feats), np.stack(masks)


def featurize_lanes(lanes: Sequence[LanePolyline], cfg: ModelConfig):
    P = cfg.max_segment_points
    segments = []
    for lane in lanes:
        lane.validate()
        segments.extend(split_lane(lane.points, P))
    feats = np.zeros((len(segments), P, LANE_FEATURES))
    mask = np.zeros((len(segments), P), dtype=bool)
    for i, seg in enumerate(segments):
        feats[i, :len(seg)] = lane_features(seg, cfg.position_scale)
        mask[i, :len(seg)] = True
    return feats, mask


def featurize_scenario(scenario: Scenario, cfg: ModelConfig) -> ScenarioFeatures:
    agent_feats, agent_mask = featurize_agents(scenario.agents, cfg)
    lane_feats, lane_mask = featurize_lanes(scenario.lanes, cfg)
    future = None
    endpoint = None
    if scenario.future_gt is not None and len(scenario.future_gt):
        future = scenario.future_gt[:cfg.horizon] / cfg.position_scale
        endpoint = scenario.future_gt[cfg.horizon - 1].copy()
    return ScenarioFeatures(scenario.scenario_id, agent_feats, agent_mask, lane_feats, lane_mask,
                            future, scenario.behavior_label.index, endpoint, scenario.is_intersection)


@dataclass
class SceneBatch:
    """Padded batch of featurized scenarios"""
    ids: List[str]
    agent_feats: np.ndarray   # (B, Na, steps, 6)
    agent_step_mask: np.ndarray  # (B, Na, steps)
    agent_valid: np.ndarray   # (B, Na)
    lane_feats: np.ndarray    # (B, Ns, P, 4)
    lane_point_mask: np.ndarray  # (B, Ns, P)
    lane_valid: np.ndarray    # (B, Ns)
    future: Optional[np.ndarray]  # (B, H, 2) normalized
    labels: np.ndarray        # (B,)
    endpoints: Optional[np.ndarray]  # (B, 2) meters
    is_intersection: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return len(self.ids)


def collate(items: Sequence[ScenarioFeatures]) -> SceneBatch:
    B = len(items)
    if B == 0:
        raise InputError("collate: empty batch")
    Na = max(len(f.agent_feats) for f in items)
    Ns = max(len(f.lane_feats) for f in items)
    steps = items[0].agent_feats.shape[1]
    P = items[0].lane_feats.shape[1] if Ns else 2
    agent_feats = np.zeros((B, Na, steps, AGENT_FEATURES))
    agent_step_mask = np.zeros((B, Na, steps), dtype=bool)
    lane_feats = np.zeros((B, Ns, P, LANE_FEATURES))
    lane_point_mask = np.zeros((B, Ns, P), dtype=bool)
    for b, f in enumerate(items):
        agent_feats[b, :len(f.agent_feats)] = f.agent_feats
        agent_step_mask[b, :len(f.agent_mask)] = f.agent_mask
        if len(f.lane_feats):
            lane_feats[b, :len(f.lane_feats)] = f.lane_feats
            lane_point_mask[b, :len(f.lane_mask)] = f.lane_mask
    has_future = all(f.future is not None for f in items)
    return SceneBatch(
        ids=[f.scenario_id for f in items],
        agent_feats=agent_feats,
        agent_step_mask=agent_step_mask,
        agent_valid=agent_step_mask.any(axis=2),
        lane_feats=lane_feats,
        lane_point_mask=lane_point_mask,
        lane_valid=lane_point_mask.any(axis=2),
        future=np.stack([f.future for f in items]) if has_future else None,
        labels=np.array([f.label for f in items], dtype=np.int64),
        endpoints=np.stack([f.endpoint for f in items]) if has_future else None,
        is_intersection=np.array([f.is_intersection for f in items], dtype=bool),
    )


def collate_scenarios(scenarios: Sequence[Scenario], cfg: ModelConfig) -> SceneBatch:
    return collate([featurize_scenario(s, cfg) for s in scenarios])


# ==================== CONDITION SET ====================

@dataclass
class ConditionSet:
    """Condition C for the denoiser and the heads, assembled once per scenario"""
    agent_tokens: Tensor                 # (B, Na, D), focal first
    agent_mask: np.ndarray               # (B, Na)
    focal_history: Tensor                # (B, D) focal token before fusion
    map_tokens: Optional[Tensor] = None  # (B, Ns, D); None in the no-map ablation
    map_mask: Optional[np.ndarray] = None
    behavior_token: Optional[Tensor] = None  # (B, D)
    step_embedding: Optional[Tensor] = None  # (B, D)

    @property
    def batch_size(self) -> int:
        return self.agent_tokens.shape[0]

    def with_behavior(self, token: Optional[Tensor]) -> "ConditionSet":
        return replace(self, behavior_token=token)

    def with_step(self, embedding: Tensor) -> "ConditionSet":
        return replace(self, step_embedding=embedding)

    def repeat(self, k: int) -> "ConditionSet":
        """Tile a single-scenario condition k times along the batch axis"""
        index = np.repeat(np.arange(self.batch_size), k)
        return ConditionSet(
            agent_tokens=take(self.agent_tokens, index),
            agent_mask=self.agent_mask[index],
            focal_history=take(self.focal_history, index),
            map_tokens=take(self.map_tokens, index) if self.map_tokens is not None else None,
            map_mask=self.map_mask[index] if self.map_mask is not None else None,
            behavior_token=take(self.behavior_token, index) if self.behavior_token is not None else None,
            step_embedding=None,
        )

    def context(self):
        """Denoiser cross-attention keys: agents, lanes, behavior token, step embedding"""
        if self.step_embedding is None:
            raise AssemblyError("condition set has no step embedding; call with_step() first")
        B = self.batch_size
        tokens = [self.agent_tokens]
        masks = [self.agent_mask]
        if self.map_tokens is not None:
            tokens.append(self.map_tokens)
            masks.append(self.map_mask)
        if self.behavior_token is not None:
            tokens.append(self.behavior_token.reshape(B, 1, -1))
            masks.append(np.ones((B, 1), dtype=bool))
        tokens.append(self.step_embedding.reshape(B, 1, -1))
        masks.append(np.ones((B, 1), dtype=bool))
        return concat(tokens, axis=1), np.concatenate(masks, axis=1)


# ==================== MODULES ====================

class AgentEncoder(Module):
    """MLP over per-step features, GRU over valid steps; final hidden state is the token"""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.step_mlp = MLP([AGENT_FEATURES, dim, dim], rng, final_activation=True)
        self.gru = GRUCell(dim, dim, rng)

    def __call__(self, feats: np.ndarray, step_mask: np.ndarray) -> Tensor:
        B, Na, steps, F = feats.shape
        x = self.step_mlp(Tensor(feats.reshape(B * Na, steps, F)))
        mask = step_mask.reshape(B * Na, steps)
        h = Tensor(np.zeros((B * Na, self.dim), dtype=x.dtype))
        for t in range(steps):
            if not mask[:, t].any():
                continue
            h_new = self.gru(x[:, t, :], h)
            h = where(mask[:, t:t + 1], h_new, h)
        return h.reshape(B, Na, self.dim)


class LaneEncoder(Module):
    """Self-attention over the points of each lane segment, FFN, masked mean pool"""

    def __init__(self, dim: int, heads: int, ffn_mult: int, rng: np.random.Generator):
        self.dim = dim
        self.point_mlp = MLP([LANE_FEATURES, dim, dim], rng)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult, rng)
        self.norm2 = LayerNorm(dim)

    def __call__(self, feats: np.ndarray, point_mask: np.ndarray) -> Tensor:
        B, Ns, P, F = feats.shape
        mask = point_mask.reshape(B * Ns, P)
        x = self.point_mlp(Tensor(feats.reshape(B * Ns, P, F)))
        x = self.norm1(x + self.attn(x, x, key_mask=mask | ~mask.any(axis=1, keepdims=True)))
        x = self.norm2(x + self.ffn(x))
        weights = mask.astype(x.dtype)[:, :, None]
        counts = np.maximum(weights.sum(axis=1), 1.0)
        pooled = tsum(x * weights, axis=1) * (1.0 / counts)
        return pooled.reshape(B, Ns, self.dim)


class CrossAttentionBlock(Module):
    """Post-norm residual cross-attention followed by a feed-forward layer"""

    def __init__(self, dim: int, heads: int, ffn_mult: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult, rng)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor, context: Tensor, context_mask: np.ndarray) -> Tensor:
        x = self.norm1(x + self.attn(x, context, key_mask=context_mask))
        return self.norm2(x + self.ffn(x))


class ConditionEncoder(Module):
    """Builds the ConditionSet from a SceneBatch"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, use_map: bool = True):
        D = cfg.embed_dim
        self.cfg = cfg
        self.use_map = use_map
        self.agent_encoder = AgentEncoder(D, rng)
        self.lane_encoder = LaneEncoder(D, cfg.heads, cfg.ffn_mult, rng)
        self.agent_to_lane = CrossAttentionBlock(D, cfg.heads, cfg.ffn_mult, rng)
        self.lane_to_agent = CrossAttentionBlock(D, cfg.heads, cfg.ffn_mult, rng)
        self.agent_to_lane_2 = CrossAttentionBlock(D, cfg.heads, cfg.ffn_mult, rng)

    def fuse(self, agent_tokens: Tensor, agent_mask: np.ndarray,
             map_tokens: Optional[Tensor], map_mask: Optional[np.ndarray]):
        """A-L, L-A, A-L; without map tokens the agent tokens pass through unchanged"""
        if map_tokens is None or map_tokens.shape[1] == 0:
            return agent_tokens, None
        a = self.agent_to_lane(agent_tokens, map_tokens, map_mask)
        m = self.lane_to_agent(map_tokens, a, agent_mask)
        a = self.agent_to_lane_2(a, m, map_mask)
        return a, m

    def __call__(self, batch: SceneBatch) -> ConditionSet:
        agent_tokens = self.agent_encoder(batch.agent_feats, batch.agent_step_mask)
        map_tokens = None
        map_mask = None
        if self.use_map and batch.lane_feats.shape[1] > 0:
            map_tokens = self.lane_encoder(batch.lane_feats, batch.lane_point_mask)
            map_mask = batch.lane_valid
        fused, map_out = self.fuse(agent_tokens, batch.agent_valid, map_tokens, map_mask)
        return ConditionSet(
            agent_tokens=fused,
            agent_mask=batch.agent_valid,
            focal_history=agent_tokens[:, 0, :],
            map_tokens=map_out,
            map_mask=map_mask if map_out is not None else None,
        )

    # ==================== SINGLE-SCENARIO HELPERS ====================

    def encode_agents(self, agents: Sequence[AgentHistory]) -> np.ndarray:
        """(N_agent, D) tokens for one scene, focal first"""
        feats, mask = featurize_agents(agents, self.cfg)
        with no_grad():
            return self.agent_encoder(feats[None], mask[None]).data[0]

    def encode_lanes(self, lanes: Sequence[LanePolyline]) -> np.ndarray:
        """(N_segment, D) tokens for one scene's lanes"""
        feats, mask = featurize_lanes(lanes, self.cfg)
        with no_grad():
            return self.lane_encoder(feats[None], mask[None]).data[0]
