"""
Scene module - synthetic driving scenarios, behavior labels, drivable-area
queries and the JSON-lines dataset format

All coordinates are meters in the focal-agent frame: the focal agent's last
observed position is the origin and its heading is +x.
"""

import concurrent.futures
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union
from scipy import stats

from .config import DatasetConfig
from .errors import ConfigError, DatasetParseError, DatasetSchemaError, InputError


HISTORY_STEPS = 50          # 5 s at 10 Hz
FUTURE_STEPS = 60           # 6 s at 10 Hz
DT = 0.1
LANE_WIDTH = 3.5
LANE_POINT_SPACING = 2.0
TURN_THRESHOLD_DEG = 15.0
INTERSECTION_RADIUS = 15.0
COORD_DECIMALS = 6

# Generator geometry
TURN_ANGLE_DEG = (70.0, 110.0)     # 90 +/- 20 degrees
TURN_RADIUS = (6.0, 20.0)
STANDARD_BRANCH_RADIUS = 12.0
BRANCH_TAIL = 100.0
INCOMING_LENGTH = 100.0
JUNCTION_DISTANCE = (3.0, 12.0)
JUNCTION_TOLERANCE = 1e-3
LATE_APPEARANCE_PROB = 0.3


class Behavior(str, Enum):
    STRAIGHT = "straight"
    LEFT = "left"
    RIGHT = "right"

    @property
    def index(self) -> int:
        return BEHAVIORS.index(self)

    @property
    def turn_sign(self) -> int:
        return {"straight": 0, "left": 1, "right": -1}[self.value]


# Canonical class order for probabilities, one-hot vectors and class_mix
BEHAVIORS: Tuple[Behavior, ...] = (Behavior.STRAIGHT, Behavior.LEFT, Behavior.RIGHT)


# ==================== DOMAIN TYPES ====================

@dataclass(eq=False)
class LanePolyline:
    lane_id: int
    points: np.ndarray
    successor_ids: List[int] = field(default_factory=list)
    width: float = LANE_WIDTH

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def validate(self) -> "LanePolyline":
        if len(self.points) < 2:
            raise InputError(f"lane {self.lane_id}: needs >= 2 points, got {len(self.points)}")
        steps = np.hypot(*np.diff(self.points, axis=0).T)
        if np.any(steps <= 0):
            raise InputError(f"lane {self.lane_id}: consecutive points must be distinct")
        if not self.width > 0:
            raise InputError(f"lane {self.lane_id}: width must be > 0, got {self.width}")
        return self


@dataclass(eq=False)
class DrivableArea:
    polygons: List[np.ndarray]
    _geometry: Optional[object] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.polygons = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in self.polygons]

    def validate(self) -> "DrivableArea":
        for i, poly in enumerate(self.polygons):
            if len(poly) < 3:
                raise InputError(f"drivable polygon {i}: needs >= 3 vertices, got {len(poly)}")
            if not Polygon(poly).is_valid:
                raise InputError(f"drivable polygon {i}: self-intersecting or degenerate")
        return self

    @property
    def geometry(self):
        """Union of all polygons, prepared for repeated point queries"""
        if self._geometry is None:
            geom = unary_union([Polygon(p) for p in self.polygons]) if self.polygons else Polygon()
            shapely.prepare(geom)
            self._geometry = geom
        return self._geometry


@dataclass(eq=False)
class AgentHistory:
    agent_id: str
    positions: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool).reshape(-1)


@dataclass(eq=False)
class Scenario:
    scenario_id: str
    lanes: List[LanePolyline]
    drivable: DrivableArea
    agents: List[AgentHistory]
    future_gt: np.ndarray
    behavior_label: Behavior
    is_intersection: bool

    def __post_init__(self):
        self.future_gt = np.asarray(self.future_gt, dtype=np.float64).reshape(-1, 2)
        self.behavior_label = Behavior(self.behavior_label)

    @property
    def focal(self) -> AgentHistory:
        return self.agents[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return scenario_to_record(self) == scenario_to_record(other)


# ==================== BEHAVIOR LABELS ====================

def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def net_heading_change(path: np.ndarray, min_step: float = 1e-6) -> float:
    """Sum of wrapped per-step heading deltas (radians); 0 if fewer than two moving steps"""
    steps = np.diff(np.asarray(path, dtype=np.float64).reshape(-1, 2), axis=0)
    moving = np.hypot(steps[:, 0], steps[:, 1]) > min_step
    if moving.sum() < 2:
        return 0.0
    headings = np.arctan2(steps[moving, 1], steps[moving, 0])
    return float(_wrap_angle(np.diff(headings)).sum())


def label_behavior(future: np.ndarray, threshold_deg: float = TURN_THRESHOLD_DEG) -> Behavior:
    """
    Straight / Left / Right from the net signed heading change of a path

    Standing still (fewer than two distinct positions) counts as Straight;
    U-turns fold into the turn of the same sign.
    """
    theta = math.degrees(net_heading_change(future))
    if theta > threshold_deg:
        return Behavior.LEFT
    if theta < -threshold_deg:
        return Behavior.RIGHT
    return Behavior.STRAIGHT


# ==================== GEOMETRY ====================

def point_in_drivable(p: Sequence[float], d: DrivableArea) -> bool:
    """True iff p is inside or on the boundary of any drivable polygon"""
    if not d.polygons:
        return False
    return bool(shapely.covers(d.geometry, shapely.points(float(p[0]), float(p[1]))))


def points_in_drivable(points: np.ndarray, d: DrivableArea) -> np.ndarray:
    """Vectorized point_in_drivable over an (..., 2) array"""
    pts = np.asarray(points, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    if not d.polygons:
        return np.zeros(pts.shape[:-1], dtype=bool)
    inside = shapely.covers(d.geometry, shapely.points(flat))
    return np.asarray(inside, dtype=bool).reshape(pts.shape[:-1])


def rigid_transform(points: np.ndarray, angle: float, offset: Sequence[float]) -> np.ndarray:
    """Rotate by `angle` about the origin, then translate by `offset`"""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(points, dtype=np.float64) @ rot.T + np.asarray(offset, dtype=np.float64)


def to_local_frame(points: np.ndarray, origin: Sequence[float], heading: float) -> np.ndarray:
    """Express world points in the frame with `origin` at (0, 0) and `heading` along +x"""
    shifted = np.asarray(points, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    return rigid_transform(shifted, -heading, (0.0, 0.0))


def lane_polygon(points: np.ndarray, width: float) -> np.ndarray:
    """Counter-clockwise polygon of a lane: centerline buffered by width/2 with square caps"""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.diff(pts, axis=0)
    seg /= np.hypot(seg[:, 0], seg[:, 1])[:, None]
    tangents = np.vstack([seg[:1], seg[:-1] + seg[1:], seg[-1:]])
    tangents /= np.hypot(tangents[:, 0], tangents[:, 1])[:, None]
    half = width / 2.0
    ext = pts.copy()
    ext[0] -= seg[0] * half
    ext[-1] += seg[-1] * half
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    left = ext + normals * half
    right = ext - normals * half
    ring = np.vstack([right, left[::-1]])
    x, y = ring[:, 0], ring[:, 1]
    area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    return ring if area > 0 else ring[::-1]


def detect_intersection(lanes: Sequence[LanePolyline], radius: float = INTERSECTION_RADIUS) -> bool:
    """True iff >= 3 lanes share an endpoint junction lying within `radius` of the origin"""
    endpoints = []
    for lane in lanes:
        endpoints.append((lane.lane_id, lane.points[0]))
        endpoints.append((lane.lane_id, lane.points[-1]))
    for _, p in endpoints:
        if np.hypot(*p) > radius:
            continue
        sharing = {lid for lid, q in endpoints if np.hypot(*(q - p)) <= JUNCTION_TOLERANCE}
        if len(sharing) >= 3:
            return True
    return False


# ==================== GENERATOR ====================

def _quantize(values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return np.array([round(float(v), COORD_DECIMALS) for v in arr.ravel()], dtype=np.float64).reshape(arr.shape)


def _path_points(s: np.ndarray, junction: float, radius: float, turn: float, sign: int) -> np.ndarray:
    """
    Points at arc length s along: straight to `junction`, then a constant-curvature
    arc of net angle sign*turn, then straight again
    """
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros(s.shape + (2,))
    before = s <= junction
    out[before, 0] = s[before]
    if sign == 0 or turn == 0:
        out[~before, 0] = s[~before]
        return out
    arc_len = radius * turn
    on_arc = (~before) & (s <= junction + arc_len)
    phi = (s[on_arc] - junction) / radius
    out[on_arc, 0] = junction + radius * np.sin(phi)
    out[on_arc, 1] = sign * radius * (1.0 - np.cos(phi))
    after = s > junction + arc_len
    end = np.array([junction + radius * math.sin(turn), sign * radius * (1.0 - math.cos(turn))])
    heading = sign * turn
    rem = s[after] - junction - arc_len
    out[after, 0] = end[0] + rem * math.cos(heading)
    out[after, 1] = end[1] + rem * math.sin(heading)
    return out


def _arc_samples(start: float, stop: float, spacing: float = LANE_POINT_SPACING) -> np.ndarray:
    s = np.arange(start, stop, spacing)
    if stop - s[-1] > 0.1 * spacing:
        s = np.append(s, stop)
    else:
        s[-1] = stop
    return s


def _branch(lane_id: int, junction: float, radius: float, turn: float, sign: int) -> LanePolyline:
    stop = junction + radius * turn + BRANCH_TAIL
    return LanePolyline(lane_id, _path_points(_arc_samples(junction, stop), junction, radius, turn, sign))


def _polyline_at(points: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Positions at arc lengths s along a polyline (clamped to its ends)"""
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(points, axis=0).T))])
    s = np.clip(s, 0.0, cum[-1])
    return np.stack([np.interp(s, cum, points[:, 0]), np.interp(s, cum, points[:, 1])], axis=1)


def _other_agent(agent_id: str, lane: LanePolyline, cfg: DatasetConfig, rng: np.random.Generator) -> AgentHistory:
    cum_len = float(np.sum(np.hypot(*np.diff(lane.points, axis=0).T)))
    speed = rng.uniform(*cfg.speed_range)
    travel = speed * DT * (HISTORY_STEPS - 1)
    end_s = rng.uniform(min(travel, cum_len), cum_len)
    s = end_s - speed * DT * np.arange(HISTORY_STEPS - 1, -1, -1)
    positions = _polyline_at(lane.points, s)
    mask = np.ones(HISTORY_STEPS, dtype=bool)
    if rng.random() < LATE_APPEARANCE_PROB:
        mask[: rng.integers(1, HISTORY_STEPS - 10)] = False
    positions[~mask] = 0.0
    return AgentHistory(agent_id, _quantize(positions), mask)


def _build_lanes(behavior: Behavior, intersection: bool, junction: float, radius: float,
                 turn: float, rng: np.random.Generator) -> List[LanePolyline]:
    incoming = LanePolyline(0, _path_points(_arc_samples(-INCOMING_LENGTH, junction), junction, 1.0, 0.0, 0))
    lanes = [incoming]
    taken = _branch(1, junction, radius, turn, behavior.turn_sign)
    lanes.append(taken)
    if intersection:
        others = [b for b in BEHAVIORS if b is not behavior]
        if rng.random() < 0.5:
            others = [others[rng.integers(len(others))]]
        for b in others:
            angle = 0.0 if b is Behavior.STRAIGHT else math.pi / 2
            lanes.append(_branch(len(lanes), junction, STANDARD_BRANCH_RADIUS, angle, b.turn_sign))
    incoming.successor_ids = [lane.lane_id for lane in lanes[1:]]
    oncoming_x = np.arange(junction - 2.0, -INCOMING_LENGTH, -LANE_POINT_SPACING)
    oncoming = np.stack([oncoming_x, np.full_like(oncoming_x, LANE_WIDTH)], axis=1)
    lanes.append(LanePolyline(len(lanes), oncoming))
    for lane in lanes:
        lane.points = _quantize(lane.points)
    return lanes


def generate_scenario(cfg: DatasetConfig, rng: np.random.Generator, scenario_id: str = "s0") -> Scenario:
    """
    Generate one scenario in the focal frame

    The focal agent drives at constant speed; turns follow a constant-curvature
    arc of 90 +/- 20 degrees starting at a junction ahead of the origin. Lanes
    are laid under the future path so the ground truth stays drivable.
    Below about 3 m/s a turn no longer completes inside the horizon: the
    junction and radius clamp to their minimums and the label follows the
    heading change the future actually makes.

    Raises:
        ConfigError: invalid dataset config
    """
    cfg.validate()
    behavior = BEHAVIORS[int(rng.choice(3, p=np.asarray(cfg.class_mix) / sum(cfg.class_mix)))]
    intersection = bool(rng.random() < cfg.intersection_fraction)
    speed = rng.uniform(*cfg.speed_range)
    horizon_len = speed * DT * FUTURE_STEPS

    turn = 0.0
    radius = STANDARD_BRANCH_RADIUS
    junction = rng.uniform(*JUNCTION_DISTANCE)
    if behavior is not Behavior.STRAIGHT:
        turn = math.radians(rng.uniform(*TURN_ANGLE_DEG))
        junction_hi = min(JUNCTION_DISTANCE[1], horizon_len - TURN_RADIUS[0] * turn - 3.0)
        junction = rng.uniform(JUNCTION_DISTANCE[0], max(JUNCTION_DISTANCE[0], junction_hi))
        radius = min(rng.uniform(*TURN_RADIUS), (horizon_len - junction - 3.0) / turn)
        radius = max(radius, TURN_RADIUS[0])

    s_future = speed * DT * np.arange(1, FUTURE_STEPS + 1)
    future = _quantize(_path_points(s_future, junction, radius, turn, behavior.turn_sign))

    lanes = _build_lanes(behavior, intersection, junction, radius, turn, rng)
    drivable = DrivableArea([_quantize(lane_polygon(lane.points, lane.width)) for lane in lanes])

    focal_x = speed * DT * np.arange(-(HISTORY_STEPS - 1), 1)
    focal = AgentHistory("focal", _quantize(np.stack([focal_x, np.zeros(HISTORY_STEPS)], axis=1)),
                         np.ones(HISTORY_STEPS, dtype=bool))
    agents = [focal]
    n_other = int(rng.integers(cfg.n_other_agents[0], cfg.n_other_agents[1] + 1))
    for i in range(n_other):
        lane = lanes[int(rng.integers(len(lanes)))]
        agents.append(_other_agent(f"agent{i + 1}", lane, cfg, rng))

    return Scenario(
        scenario_id=scenario_id,
        lanes=lanes,
        drivable=drivable,
        agents=agents,
        future_gt=future,
        behavior_label=label_behavior(future),
        is_intersection=detect_intersection(lanes),
    )


def scenario_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, scenario index)"""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_dataset(cfg: DatasetConfig, workers: int = 1) -> List[Scenario]:
    """
    Generate cfg.n_scenarios scenarios; output is identical for any worker count

    Args:
        cfg: Dataset config
        workers: Number of concurrent generator threads
    """
    cfg.validate()

    def build(i: int) -> Scenario:
        return generate_scenario(cfg, scenario_rng(cfg.rng_seed, i), scenario_id=f"s{cfg.rng_seed}-{i:06d}")

    if workers <= 1:
        return [build(i) for i in range(cfg.n_scenarios)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(build, range(cfg.n_scenarios)))


# ==================== NORMALIZATION ====================

def transform_scenario(scenario: Scenario, angle: float, offset: Sequence[float]) -> Scenario:
    """Apply one rigid transform to every coordinate of a scenario"""
    def move(points):
        return rigid_transform(points, angle, offset)

    agents = []
    for a in scenario.agents:
        pos = move(a.positions)
        pos[~a.valid_mask] = 0.0
        agents.append(AgentHistory(a.agent_id, pos, a.valid_mask.copy()))
    return Scenario(
        scenario_id=scenario.scenario_id,
        lanes=[LanePolyline(l.lane_id, move(l.points), list(l.successor_ids), l.width) for l in scenario.lanes],
        drivable=DrivableArea([move(p) for p in scenario.drivable.polygons]),
        agents=agents,
        future_gt=move(scenario.future_gt),
        behavior_label=scenario.behavior_label,
        is_intersection=scenario.is_intersection,
    )


def normalize_to_focal(scenario: Scenario) -> Scenario:
    """Re-express a scenario so the focal agent's last observed pose is the origin facing +x"""
    focal = scenario.focal
    valid = np.flatnonzero(focal.valid_mask)
    if len(valid) < 2:
        raise InputError(f"{scenario.scenario_id}: focal agent needs >= 2 valid steps to define a heading")
    last, prev = focal.positions[valid[-1]], focal.positions[valid[-2]]
    heading = math.atan2(last[1] - prev[1], last[0] - prev[0])
    c, s = math.cos(-heading), math.sin(-heading)
    offset = -np.array([c * last[0] - s * last[1], s * last[0] + c * last[1]])
    return transform_scenario(scenario, -heading, offset)


# ==================== DATASET FILES ====================

REQUIRED_KEYS = ("id", "lanes", "drivable", "agents", "future", "label", "intersection")


def _coords(points: np.ndarray) -> List[List[float]]:
    return [[round(float(x), COORD_DECIMALS), round(float(y), COORD_DECIMALS)] for x, y in np.asarray(points)]


def scenario_to_record(s: Scenario) -> Dict:
    return {
        "id": s.scenario_id,
        "lanes": [{"points": _coords(l.points), "successors": list(l.successor_ids),
                   "width": float(l.width)} for l in s.lanes],
        "drivable": [_coords(p) for p in s.drivable.polygons],
        "agents": [{"id": a.agent_id, "positions": _coords(a.positions),
                    "mask": [bool(m) for m in a.valid_mask]} for a in s.agents],
        "future": _coords(s.future_gt),
        "label": s.behavior_label.value,
        "intersection": bool(s.is_intersection),
    }


def _points_field(value, line: int, name: str, length: Optional[int] = None, min_len: int = 0) -> np.ndarray:
    if not isinstance(value, list):
        raise DatasetSchemaError(f"expected a list of [x, y] pairs, got {type(value).__name__}", line, name)
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetSchemaError("expected a list of [x, y] pairs", line, name)
    if arr.size == 0 and min_len == 0 and length is None:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DatasetSchemaError(f"expected a list of [x, y] pairs, got shape {arr.shape}", line, name)
    if length is not None and arr.shape[0] != length:
        raise DatasetSchemaError(f"expected {length} points, got {arr.shape[0]}", line, name)
    if arr.shape[0] < min_len:
        raise DatasetSchemaError(f"expected >= {min_len} points, got {arr.shape[0]}", line, name)
    if not np.all(np.isfinite(arr)):
        raise DatasetSchemaError("coordinates must be finite", line, name)
    return arr


def _list_field(value, line: int, name: str) -> list:
    if not isinstance(value, list):
        raise DatasetSchemaError(f"expected a list, got {type(value).__name__}", line, name)
    return value


def _object_field(value, line: int, name: str) -> Dict:
    if not isinstance(value, dict):
        raise DatasetSchemaError(f"expected an object, got {type(value).__name__}", line, name)
    return value


def _bool_field(value, line: int, name: str) -> bool:
    if not isinstance(value, bool):
        raise DatasetSchemaError(f"expected true or false, got {value!r}", line, name)
    return value


def _number_field(value, line: int, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise DatasetSchemaError(f"expected a finite number, got {value!r}", line, name)
    return float(value)


def _int_field(value, line: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise DatasetSchemaError(f"expected an integer, got {value!r}", line, name)
    return value


def scenario_from_record(record: Dict, line: Optional[int] = None) -> Scenario:
    """Parse one dataset record; raises DatasetSchemaError on missing, mistyped or invalid fields"""
    if not isinstance(record, dict):
        raise DatasetSchemaError("record must be a JSON object", line)
    for key in REQUIRED_KEYS:
        if key not in record:
            raise DatasetSchemaError("missing field", line, key)
    try:
        label = Behavior(record["label"])
    except (TypeError, ValueError):
        raise DatasetSchemaError(f"unknown label '{record['label']}'", line, "label")

    lanes = []
    for i, lane in enumerate(_list_field(record["lanes"], line, "lanes")):
        lane = _object_field(lane, line, f"lanes[{i}]")
        for key in ("points", "successors", "width"):
            if key not in lane:
                raise DatasetSchemaError("missing field", line, f"lanes[{i}].{key}")
        successors = [_int_field(x, line, f"lanes[{i}].successors")
                      for x in _list_field(lane["successors"], line, f"lanes[{i}].successors")]
        width = _number_field(lane["width"], line, f"lanes[{i}].width")
        if width <= 0:
            raise DatasetSchemaError(f"lane width must be positive, got {width}", line, f"lanes[{i}].width")
        lanes.append(LanePolyline(i, _points_field(lane["points"], line, f"lanes[{i}].points", min_len=2),
                                  successors, width))

    agents = []
    for i, agent in enumerate(_list_field(record["agents"], line, "agents")):
        agent = _object_field(agent, line, f"agents[{i}]")
        for key in ("id", "positions", "mask"):
            if key not in agent:
                raise DatasetSchemaError("missing field", line, f"agents[{i}].{key}")
        positions = _points_field(agent["positions"], line, f"agents[{i}].positions", length=HISTORY_STEPS)
        mask = _list_field(agent["mask"], line, f"agents[{i}].mask")
        if len(mask) != HISTORY_STEPS:
            raise DatasetSchemaError(f"expected {HISTORY_STEPS} mask entries, got {len(mask)}",
                                     line, f"agents[{i}].mask")
        mask = [_bool_field(m, line, f"agents[{i}].mask") for m in mask]
        agents.append(AgentHistory(str(agent["id"]), positions, np.asarray(mask, dtype=bool)))
    if not agents:
        raise DatasetSchemaError("scenario needs at least the focal agent", line, "agents")

    polygons = [_points_field(p, line, f"drivable[{i}]", min_len=3)
                for i, p in enumerate(_list_field(record["drivable"], line, "drivable"))]
    return Scenario(
        scenario_id=str(record["id"]),
        lanes=lanes,
        drivable=DrivableArea(polygons),
        agents=agents,
        future_gt=_points_field(record["future"], line, "future", length=FUTURE_STEPS),
        behavior_label=label,
        is_intersection=_bool_field(record["intersection"], line, "intersection"),
    )


def write_dataset(path: Union[str, Path], scenarios: Iterable[Scenario]) -> int:
    """Write scenarios as UTF-8 JSON lines; returns the number written"""
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for s in scenarios:
            f.write(json.dumps(scenario_to_record(s), separators=(",", ":")) + "\n")
            count += 1
    return count


def read_dataset(path: Union[str, Path]) -> List[Scenario]:
    """
    Read a JSON-lines dataset

    Raises:
        DatasetParseError: a line is not valid JSON (names the line number)
        DatasetSchemaError: a record misses a field or has a wrong type or length
    """
    scenarios = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(str(e), line_number)
            scenarios.append(scenario_from_record(record, line_number))
    return scenarios


# ==================== SPLITS / SUMMARY ====================

def _id_fraction(scenario_id: str) -> float:
    digest = hashlib.sha1(scenario_id.encode("utf-8")).hexdigest()
    return int(digest[:8], 16) / 2 ** 32


def split_dataset(scenarios: Sequence[Scenario], val_fraction: float = 0.1) -> Tuple[List[Scenario], List[Scenario]]:
    """Deterministic train/val split by a stable hash of the scenario id"""
    train, val = [], []
    for s in scenarios:
        (val if _id_fraction(s.scenario_id) < val_fraction else train).append(s)
    return train, val


def _focal_speed(s: Scenario) -> float:
    """Mean observed focal speed (m/s) over consecutive valid history steps"""
    pos, mask = s.focal.positions, s.focal.valid_mask
    both = mask[1:] & mask[:-1]
    if not both.any():
        return 0.0
    steps = np.hypot(*np.diff(pos, axis=0)[both].T)
    return float(steps.mean() / DT)


def dataset_summary(scenarios: Sequence[Scenario], class_mix: Optional[Sequence[float]] = None) -> Dict:
    """Label/intersection statistics, ground-truth drivability and a chi-square fit to class_mix"""
    n = len(scenarios)
    counts = {b.value: 0 for b in BEHAVIORS}
    for s in scenarios:
        counts[s.behavior_label.value] += 1
    summary = {
        "n_scenarios": n,
        "label_counts": counts,
        "label_frequencies": {k: (v / n if n else 0.0) for k, v in counts.items()},
        "intersection_fraction": (sum(s.is_intersection for s in scenarios) / n) if n else 0.0,
        "gt_ecfl": (sum(bool(points_in_drivable(s.future_gt, s.drivable).all()) for s in scenarios) / n) if n else 0.0,
        "mean_agents": (sum(len(s.agents) for s in scenarios) / n) if n else 0.0,
        "mean_focal_speed": float(np.mean([_focal_speed(s) for s in scenarios])) if n else 0.0,
        "chi2_pvalue": None,
    }
    if class_mix is not None and n:
        observed = np.array([counts[b.value] for b in BEHAVIORS], dtype=np.float64)
        expected = np.asarray(class_mix, dtype=np.float64) * n
        keep = expected > 0
        if observed[~keep].sum() > 0:
            summary["chi2_pvalue"] = 0.0
        elif keep.sum() >= 2:
            summary["chi2_pvalue"] = float(stats.chisquare(observed[keep], expected[keep]).pvalue)
        else:
            summary["chi2_pvalue"] = 1.0
    return summary
