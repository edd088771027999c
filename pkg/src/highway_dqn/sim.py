"""Kinematic simulation of a straight, toroidal multi-lane highway.

Vehicles are stored column-wise in numpy arrays inside an immutable
:class:`WorldState`; every operation returns a new state. Controlled (ego)
vehicles follow the high-level targets set by :func:`apply_agent_action`,
scripted traffic follows :func:`traffic_accel` and never changes lane.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Sequence, Set

import numpy as np

SPEED_MIN = 20.0
SPEED_MAX = 30.0
SPEED_DELTA = 5.0

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0

MAX_ACCEL = 3.0
MAX_BRAKE = 6.0
SPEED_GAIN = 0.5  # 1/s, proportional speed controller of scripted traffic
HEADWAY = 0.6  # s
LANE_CHANGE_TIME = 1.0  # s

DT = 0.2

TRAFFIC_PER_KM_LANE = {"none": 0, "regular": 10, "dense": 25}


class Action(enum.IntEnum):
    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    FASTER = 3
    SLOWER = 4


N_ACTIONS = len(Action)


class CapacityError(ValueError):
    """Raised when the requested vehicles cannot be placed gap-feasibly."""


@dataclass(frozen=True)
class RoadConfig:
    lane_count: int = 4
    lane_width: float = 4.0
    length: float = 1000.0

    def __post_init__(self):
        if self.lane_count < 1:
            raise ValueError(f"lane_count must be >= 1, got {self.lane_count}")
        if not self.lane_width > 0:
            raise ValueError(f"lane_width must be > 0, got {self.lane_width}")
        if not self.length > 10 * VEHICLE_LENGTH:
            raise ValueError(
                f"length must exceed {10 * VEHICLE_LENGTH} m, got {self.length}")

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width

    def lane_center(self, lane):
        return (np.asarray(lane) + 0.5) * self.lane_width


@dataclass(frozen=True)
class TrafficConfig:
    density: str = "regular"
    traffic_speed_range: tuple = (15.0, 25.0)
    min_initial_gap: float = 12.0

    def __post_init__(self):
        if self.density not in TRAFFIC_PER_KM_LANE:
            raise ValueError(
                f"density must be one of {sorted(TRAFFIC_PER_KM_LANE)}, got {self.density!r}")
        lo, hi = self.traffic_speed_range
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid traffic_speed_range {self.traffic_speed_range}")
        if self.min_initial_gap < 0:
            raise ValueError("min_initial_gap must be >= 0")
        object.__setattr__(self, "traffic_speed_range", (float(lo), float(hi)))

    def n_traffic(self, road: RoadConfig) -> int:
        per_km_lane = TRAFFIC_PER_KM_LANE[self.density]
        return int(round(per_km_lane * road.lane_count * road.length / 1000.0))


@dataclass(frozen=True)
class VehicleState:
    id: int
    lane: int
    s: float
    d: float
    v: float
    target_speed: float
    target_lane: int
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    controlled: bool = False


_FIELDS = ("lane", "s", "d", "v", "target_speed", "target_lane",
           "length", "width", "controlled")


@dataclass(frozen=True, eq=False)
class WorldState:
    """Snapshot of the highway. Arrays are indexed by vehicle slot, not id."""

    road: RoadConfig
    ids: np.ndarray
    lane: np.ndarray
    s: np.ndarray
    d: np.ndarray
    v: np.ndarray
    target_speed: np.ndarray
    target_lane: np.ndarray
    length: np.ndarray
    width: np.ndarray
    controlled: np.ndarray
    time: float = 0.0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def from_vehicles(cls, road: RoadConfig, vehicles: Sequence[VehicleState],
                      time: float = 0.0, rng=None) -> "WorldState":
        ids = np.array([veh.id for veh in vehicles], dtype=np.int64)
        if len(set(ids.tolist())) != len(ids):
            raise ValueError("vehicle ids must be unique")
        cols = {}
        for name, dtype in zip(_FIELDS, (np.int64, float, float, float, float,
                                         np.int64, float, float, bool)):
            cols[name] = np.array([getattr(veh, name) for veh in vehicles], dtype=dtype)
        cols["s"] = np.mod(cols["s"], road.length)
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        return cls(road=road, ids=ids, time=float(time), rng=rng, **cols)

    def __len__(self):
        return len(self.ids)

    @property
    def vehicles(self) -> List[VehicleState]:
        return [self.vehicle_at(i) for i in range(len(self.ids))]

    def vehicle_at(self, index: int) -> VehicleState:
        return VehicleState(
            id=int(self.ids[index]), lane=int(self.lane[index]), s=float(self.s[index]),
            d=float(self.d[index]), v=float(self.v[index]),
            target_speed=float(self.target_speed[index]),
            target_lane=int(self.target_lane[index]), length=float(self.length[index]),
            width=float(self.width[index]), controlled=bool(self.controlled[index]))

    def index_of(self, vehicle_id: int) -> int:
        hits = np.flatnonzero(self.ids == vehicle_id)
        if hits.size == 0:
            raise KeyError(f"unknown vehicle id {vehicle_id}")
        return int(hits[0])

    def vehicle(self, vehicle_id: int) -> VehicleState:
        return self.vehicle_at(self.index_of(vehicle_id))

    @property
    def agent_ids(self) -> List[int]:
        return sorted(int(i) for i in self.ids[self.controlled])

    @property
    def y(self) -> np.ndarray:
        """Absolute lateral position, measured from the left road edge."""
        return self.road.lane_center(self.lane) + self.d

    def lateral_velocity(self) -> np.ndarray:
        """Current lateral glide velocity, positive toward the right edge."""
        offset = self.road.lane_center(self.target_lane) - self.y
        rate = self.road.lane_width / LANE_CHANGE_TIME
        return np.where(np.abs(offset) > 1e-9, np.sign(offset) * rate, 0.0)

    def copy(self, **changes) -> "WorldState":
        arrays = {name: getattr(self, name).copy() for name in ("ids",) + _FIELDS}
        arrays.update(changes)
        return replace(self, **arrays)

    def same_as(self, other: "WorldState") -> bool:
        """Bit-exact equality of road, time and every vehicle column."""
        if self.road != other.road or self.time != other.time:
            return False
        return all(np.array_equal(getattr(self, name), getattr(other, name))
                   for name in ("ids",) + _FIELDS)


def _place_lane(rng, n, length, spacing):
    """Uniformly random gap-feasible positions of ``n`` vehicles on a ring."""
    free = length - n * spacing
    u = np.sort(rng.uniform(0.0, free, size=n))
    return np.mod(u + np.arange(n) * spacing + rng.uniform(0.0, length), length)


def spawn_world(road: RoadConfig, traffic: TrafficConfig, n_agents: int,
                seed: int) -> WorldState:
    """Create the initial world of an episode.

    Agents occupy ids ``0 .. n_agents-1`` and start with a speed drawn
    uniformly in ``[SPEED_MIN, SPEED_MAX]``; traffic vehicles follow. Every
    same-lane bumper-to-bumper gap is at least ``traffic.min_initial_gap``.
    """
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    rng = np.random.default_rng(seed)
    n_traffic = traffic.n_traffic(road)
    n_lanes = road.lane_count

    per_lane = np.full(n_lanes, n_traffic // n_lanes, dtype=np.int64)
    per_lane[rng.permutation(n_lanes)[: n_traffic % n_lanes]] += 1
    agent_lanes = rng.integers(0, n_lanes, size=n_agents)
    np.add.at(per_lane, agent_lanes, 1)

    spacing = VEHICLE_LENGTH + traffic.min_initial_gap
    capacity = int(np.floor(road.length / spacing))
    if per_lane.max() > capacity:
        raise CapacityError(
            f"{int(per_lane.max())} vehicles do not fit in one lane of "
            f"{road.length} m with gap {traffic.min_initial_gap} m (capacity {capacity})")

    lanes, positions, is_agent = [], [], []
    for lane in range(n_lanes):
        n = int(per_lane[lane])
        if n == 0:
            continue
        pos = _place_lane(rng, n, road.length, spacing)
        flags = np.zeros(n, dtype=bool)
        n_ag = int(np.sum(agent_lanes == lane))
        flags[rng.choice(n, size=n_ag, replace=False)] = True
        lanes.append(np.full(n, lane))
        positions.append(pos)
        is_agent.append(flags)
    lanes = np.concatenate(lanes)
    positions = np.concatenate(positions)
    is_agent = np.concatenate(is_agent)

    # agents first, then traffic, each group ordered by (lane, s)
    order = np.concatenate([np.flatnonzero(is_agent), np.flatnonzero(~is_agent)])
    lanes, positions, is_agent = lanes[order], positions[order], is_agent[order]
    n = len(order)
    lo, hi = traffic.traffic_speed_range
    speeds = np.where(is_agent, rng.uniform(SPEED_MIN, SPEED_MAX, size=n),
                      rng.uniform(lo, hi, size=n))

    return WorldState(
        road=road, ids=np.arange(n, dtype=np.int64), lane=lanes.astype(np.int64),
        s=positions, d=np.zeros(n), v=speeds, target_speed=speeds.copy(),
        target_lane=lanes.astype(np.int64), length=np.full(n, VEHICLE_LENGTH),
        width=np.full(n, VEHICLE_WIDTH), controlled=is_agent, time=0.0, rng=rng)


def apply_agent_action(world: WorldState, agent_id: int, action: int) -> WorldState:
    if not 0 <= int(action) < N_ACTIONS:
        raise ValueError(f"action must be in 0..{N_ACTIONS - 1}, got {action}")
    idx = world.index_of(agent_id)
    if not world.controlled[idx]:
        raise KeyError(f"vehicle {agent_id} is not a controlled agent")
    action = Action(int(action))
    if action == Action.IDLE:
        return world
    target_lane = world.target_lane.copy()
    target_speed = world.target_speed.copy()
    if action == Action.LANE_LEFT:
        target_lane[idx] = max(world.lane[idx] - 1, 0)
    elif action == Action.LANE_RIGHT:
        target_lane[idx] = min(world.lane[idx] + 1, world.road.lane_count - 1)
    elif action == Action.FASTER:
        target_speed[idx] = min(target_speed[idx] + SPEED_DELTA, SPEED_MAX)
    else:
        target_speed[idx] = max(target_speed[idx] - SPEED_DELTA, SPEED_MIN)
    return replace(world, target_lane=target_lane, target_speed=target_speed)


def _front_gaps(world: WorldState) -> np.ndarray:
    """Bumper-to-bumper gap to the nearest vehicle ahead in each vehicle's lane.

    A vehicle blocks its current lane and, while gliding, its target lane.
    """
    n = len(world)
    if n < 2:
        return np.full(n, np.inf)
    L = world.road.length
    gliding = np.flatnonzero(world.target_lane != world.lane)
    owner = np.concatenate([np.arange(n), gliding])
    lane = np.concatenate([world.lane, world.target_lane[gliding]])
    key = lane * (2.0 * L) + world.s[owner]
    order = np.argsort(key, kind="stable")
    owner, lane, key = owner[order], lane[order], key[order]

    pos = np.searchsorted(key, world.lane * (2.0 * L) + world.s, side="right")
    lane_start = np.searchsorted(lane, world.lane, side="left")
    lane_end = np.searchsorted(lane, world.lane, side="right")
    wrapped = pos >= lane_end
    pos = np.where(wrapped, lane_start, pos)
    lead = owner[np.minimum(pos, len(owner) - 1)]
    ds = np.mod(world.s[lead] - world.s, L)
    gaps = ds - 0.5 * (world.length + world.length[lead])
    # alone in the lane, or the only candidate sits at exactly the same s
    invalid = (lead == np.arange(n)) | (ds <= 0)
    return np.where(invalid, np.inf, gaps)


def _scripted_accel(v, target_speed, gap):
    threshold = 2.0 * v * HEADWAY
    a = SPEED_GAIN * (target_speed - v)
    with np.errstate(divide="ignore", invalid="ignore"):
        severity = np.where(threshold > 0, (threshold - gap) / (0.5 * threshold), 0.0)
    inside = gap < threshold
    brake = np.where(inside, -MAX_BRAKE * np.minimum(severity, 1.0), 0.0)
    brake = np.where(gap <= 0, -MAX_BRAKE, brake)
    # inside the headway zone the brake also cancels any pull back up to target speed
    brake = brake - np.where(inside | (gap <= 0), np.maximum(a, 0.0), 0.0)
    a = np.clip(a + brake, -MAX_BRAKE, MAX_ACCEL)
    return np.where(v <= 0, np.maximum(a, 0.0), a)


def traffic_accel(vehicle: VehicleState, world: WorldState) -> float:
    """Acceleration command of one scripted vehicle.

    Proportional tracking of ``target_speed`` plus a brake term that ramps
    to full braking as the front gap closes from ``2*v*HEADWAY`` to half
    of that; inside that zone the brake term also cancels any positive
    tracking term. The result is clamped to ``[-MAX_BRAKE, MAX_ACCEL]``.
    """
    if vehicle.controlled:
        raise ValueError("traffic_accel is only defined for scripted vehicles")
    L = world.road.length
    gap = np.inf
    for j in range(len(world)):
        if int(world.ids[j]) == vehicle.id:
            continue
        if world.lane[j] != vehicle.lane and world.target_lane[j] != vehicle.lane:
            continue
        ds = (world.s[j] - vehicle.s) % L
        if ds <= 0:
            continue
        gap = min(gap, ds - 0.5 * (vehicle.length + world.length[j]))
    return float(_scripted_accel(np.float64(vehicle.v), vehicle.target_speed, gap))


def traffic_accels(world: WorldState) -> np.ndarray:
    """Vectorized :func:`traffic_accel` for every vehicle (controlled rows are meaningless)."""
    return _scripted_accel(world.v, world.target_speed, _front_gaps(world))


def step_world(world: WorldState, dt: float = DT) -> WorldState:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    road = world.road
    new_time = round(world.time + dt, 9)
    if len(world) == 0:
        return replace(world, time=new_time)

    s = np.mod(world.s + world.v * dt, road.length)

    ctrl = world.controlled
    dv_ctrl = np.clip(world.target_speed - world.v, -MAX_ACCEL * dt, MAX_ACCEL * dt)
    v_ctrl = np.clip(world.v + dv_ctrl, SPEED_MIN, SPEED_MAX)
    v_traffic = np.maximum(world.v + traffic_accels(world) * dt, 0.0)
    v = np.where(ctrl, v_ctrl, v_traffic)

    y = world.y
    offset = road.lane_center(world.target_lane) - y
    max_step = road.lane_width / LANE_CHANGE_TIME * dt
    y = y + np.clip(offset, -max_step, max_step)
    lane = np.clip(np.floor(y / road.lane_width).astype(np.int64), 0, road.lane_count - 1)
    d = y - road.lane_center(lane)

    return replace(world, s=s, v=v, lane=lane, d=d, time=new_time)


def _overlaps(world: WorldState, rows: np.ndarray) -> np.ndarray:
    L = world.road.length
    ds = np.mod(world.s[rows, None] - world.s[None, :], L)
    ds = np.minimum(ds, L - ds)
    y = world.y
    dy = np.abs(y[rows, None] - y[None, :])
    overlap = ((ds < 0.5 * (world.length[rows, None] + world.length[None, :]))
               & (dy < 0.5 * (world.width[rows, None] + world.width[None, :])))
    overlap[np.arange(len(rows)), rows] = False
    return overlap


def detect_collisions(world: WorldState) -> Set[frozenset]:
    """Unordered id pairs whose footprint rectangles overlap (strictly)."""
    if len(world) < 2:
        return set()
    overlap = _overlaps(world, np.arange(len(world)))
    ii, jj = np.nonzero(np.triu(overlap, k=1))
    return {frozenset((int(world.ids[i]), int(world.ids[j]))) for i, j in zip(ii, jj)}


def collisions_of(world: WorldState, vehicle_ids: Sequence[int]) -> Set[frozenset]:
    """The subset of :func:`detect_collisions` involving ``vehicle_ids``."""
    if len(world) < 2:
        return set()
    rows = np.array([world.index_of(v) for v in vehicle_ids], dtype=np.int64)
    ii, jj = np.nonzero(_overlaps(world, rows))
    return {frozenset((int(world.ids[rows[i]]), int(world.ids[j]))) for i, j in zip(ii, jj)}


def collisions_involving(pairs: Iterable[frozenset], vehicle_id: int) -> bool:
    return any(vehicle_id in pair for pair in pairs)
