"""Road geometry, vehicle population and the fixed-timestep world loop.

Coordinates: every lane runs along s (meters, increasing downstream); a
vehicle's `s` is its front bumper. Main lanes are indexed 0..n-1 with lateral
centerlines at lane*lane_width; the on-ramp is the distinguished lane index
-1, running parallel to lane 0 and joining it at the merge point.

One World instance is single-threaded; separate instances share nothing, so a
harness can run many seeded worlds in parallel.
"""

from __future__ import annotations

import enum
import json
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from . import frenet
from .idm import IdmParams, idm_accel, safe_entry_speed
from .randomization import (DriverParams, Provenance, RandomizationSpec,
                            default_driver_params, sample_params)
from .rng import RngBundle
from .sl2015 import LaneChangeState, LaneContext, LaneDecision, decide_lane_change

RAMP_LANE = -1
VEHICLE_LENGTH = 5.0


class InvalidGeometry(ValueError):
    pass


class MissingTrajectory(RuntimeError):
    pass


class RoadKind(enum.Enum):
    FREEWAY = "freeway"
    MERGING = "merging"


class TrafficMode(enum.Enum):
    RULE_BASED = "rule_based"
    RULE_BASED_RANDOMIZED = "rule_based_randomized"
    HIGH_FIDELITY = "high_fidelity"


class Controller(enum.Enum):
    RULE_BASED = "rule_based"
    FRENET_PLANNED = "frenet_planned"
    AGENT = "agent"


@dataclass(frozen=True)
class RoadNetwork:
    kind: RoadKind
    lane_count_main: int
    lane_length: float
    lane_width: float = 3.2
    merge_point_s: float | None = None
    control_zone: tuple[float, float] | None = None
    ramp_start_s: float | None = None

    def centerline(self, lane: int) -> float:
        if lane == RAMP_LANE:
            return -self.lane_width
        return lane * self.lane_width

    def main_lanes(self) -> list[int]:
        return list(range(self.lane_count_main))

    def centerlines(self) -> list[float]:
        return [self.centerline(i) for i in self.main_lanes()]


CONTROL_ZONE_HALF = 100.0  # m on each side of the merge point
RAMP_RUN = 150.0           # m of ramp upstream of the merge point


def build_network(kind: RoadKind, *, lane_count_main: int | None = None,
                  lane_length: float | None = None, merge_point_s: float | None = None,
                  lane_width: float = 3.2, ramp_start_s: float | None = None) -> RoadNetwork:
    """Validated road network with defaults matching the two scenes."""
    if kind is RoadKind.FREEWAY:
        lanes = 2 if lane_count_main is None else lane_count_main
        length = 1000.0 if lane_length is None else lane_length
        if lanes < 1 or length <= 0:
            raise InvalidGeometry(f"freeway needs >=1 lanes of positive length, got {lanes}x{length}")
        return RoadNetwork(kind, lanes, length, lane_width)

    lanes = 1 if lane_count_main is None else lane_count_main
    length = 500.0 if lane_length is None else lane_length
    merge = 300.0 if merge_point_s is None else merge_point_s
    zone = (merge - CONTROL_ZONE_HALF, merge + CONTROL_ZONE_HALF)
    ramp_start = (merge - RAMP_RUN) if ramp_start_s is None else ramp_start_s
    if lanes < 1 or length <= 0:
        raise InvalidGeometry(f"merging needs >=1 lanes of positive length, got {lanes}x{length}")
    if zone[0] < 0 or zone[1] > length:
        raise InvalidGeometry(f"control zone {zone} leaves the road [0, {length}]")
    if not (0 <= ramp_start < merge):
        raise InvalidGeometry(f"ramp start {ramp_start} must lie in [0, merge point {merge})")
    return RoadNetwork(kind, lanes, length, lane_width, merge, zone, ramp_start)


@dataclass
class SimConfig:
    dt: float = 0.1
    spawn_probability: float = 0.56   # per second per entry lane
    seed: int = 0
    traffic_mode: TrafficMode = TrafficMode.RULE_BASED
    randomization_overrides: dict[str, bool] | None = None  # per-parameter enable flags
    episode_timeout: float = 60.0
    entry_block_distance: float = 15.0
    entry_speed_capped: bool = True
    planner: frenet.PlannerConfig = field(default_factory=frenet.PlannerConfig)

    def validate(self) -> "SimConfig":
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if not (0.0 <= self.spawn_probability <= 1.0):
            raise ValueError("spawn probability must lie in [0, 1]")
        return self

    def randomization_spec(self) -> RandomizationSpec:
        if self.traffic_mode is not TrafficMode.RULE_BASED_RANDOMIZED:
            return RandomizationSpec.none_enabled()
        spec = RandomizationSpec.all_enabled()
        if self.randomization_overrides:
            from .randomization import ablation_spec
            for name, enabled in self.randomization_overrides.items():
                if not enabled:
                    spec = ablation_spec(spec, name)
        return spec


class Vehicle:
    """Kinematic state plus the driver model owned by one vehicle."""

    __slots__ = ("vid", "lane", "s", "v", "a", "length", "params", "controller",
                 "y", "lc_state", "trajectory", "traj_age", "fallback_brake")

    def __init__(self, vid: int, lane: int, s: float, v: float, params: DriverParams,
                 controller: Controller = Controller.RULE_BASED,
                 length: float = VEHICLE_LENGTH, y: float | None = None):
        self.vid = vid
        self.lane = lane
        self.s = s
        self.v = v
        self.a = 0.0
        self.length = length
        self.params = params
        self.controller = controller
        self.y = y if y is not None else float("nan")  # set by World on insert
        self.lc_state = LaneChangeState()
        self.trajectory: frenet.CandidateTrajectory | None = None
        self.traj_age = 0.0
        self.fallback_brake = False

    @property
    def rear(self) -> float:
        return self.s - self.length


@dataclass
class CollisionEvent:
    t: float
    vid_a: int
    vid_b: int
    lane: int


class World:
    def __init__(self, network: RoadNetwork, config: SimConfig, rng: RngBundle,
                 trace: list | None = None):
        config.validate()
        self.network = network
        self.config = config
        self.rng = rng
        self.sampling_spec = config.randomization_spec()
        self.t = 0.0
        self.step_index = 0
        self.steps_per_second = int(round(1.0 / config.dt))
        self.vehicles: list[Vehicle] = []
        self._next_id = 0
        self.agent: Vehicle | None = None
        self._agent_accel = 0.0
        self._agent_lane_cmd = 0
        # counters for the conservation invariant and metrics
        self.spawned = 0
        self.despawned = 0
        self.blocked_spawns = 0
        self.removed_in_collisions = 0
        self.collision_events: list[CollisionEvent] = []
        self.agent_collided = False
        self.trace = trace

    # ------------------------------------------------------------------ setup

    def _new_params(self) -> DriverParams:
        if self.config.traffic_mode is TrafficMode.RULE_BASED_RANDOMIZED:
            return sample_params(self.sampling_spec, self.rng.params)
        return default_driver_params()

    def add_vehicle(self, lane: int, s: float, v: float,
                    params: DriverParams | None = None,
                    controller: Controller = Controller.RULE_BASED) -> Vehicle:
        veh = Vehicle(self._next_id, lane, s, v,
                      params if params is not None else self._new_params(), controller)
        veh.y = self.network.centerline(lane)
        self._next_id += 1
        self.vehicles.append(veh)
        self.spawned += 1
        if controller is Controller.AGENT:
            self.agent = veh
        return veh

    def entry_lanes(self) -> list[int]:
        if self.network.kind is RoadKind.FREEWAY:
            return self.network.main_lanes()
        return [0]

    def prefill(self, settle_seconds: float = 2.0) -> None:
        """Populate the road as if the spawn process had been running long
        enough for the slowest vehicle to traverse it, then settle briefly."""
        fill_seconds = int(math.ceil(self.network.lane_length / 7.0)) + 5
        phi = self.config.spawn_probability
        for lane in self.entry_lanes():
            leader: Vehicle | None = None
            for age in range(fill_seconds, 0, -1):
                if self.rng.spawn.random() >= phi:
                    continue
                params = self._new_params()
                v0 = params.idm.v0
                pos_free = params.idm.s0 + VEHICLE_LENGTH + v0 * age
                if leader is None:
                    pos = pos_free
                    v = v0
                else:
                    eq_gap = params.idm.s0 + v0 * params.idm.T
                    pos = min(pos_free, leader.rear - eq_gap)
                    v = v0 if pos == pos_free else min(v0, leader.v)
                if pos - VEHICLE_LENGTH > self.network.lane_length:
                    leader = None
                    continue
                if pos < VEHICLE_LENGTH + self.config.entry_block_distance:
                    self.blocked_spawns += 1
                    continue
                leader = self.add_vehicle(lane, pos, max(0.0, v), params)
        for _ in range(int(round(settle_seconds / self.config.dt))):
            self.step()

    # ------------------------------------------------------------- inspection

    def lanes_sorted(self) -> dict[int, list[Vehicle]]:
        lanes: dict[int, list[Vehicle]] = {}
        for veh in self.vehicles:
            lanes.setdefault(veh.lane, []).append(veh)
        for vs in lanes.values():
            vs.sort(key=lambda v: v.s)
        return lanes

    @staticmethod
    def _leader_follower(ordered: list[Vehicle], s: float, skip: Vehicle | None = None
                         ) -> tuple[Vehicle | None, Vehicle | None]:
        leader = None
        follower = None
        for veh in ordered:
            if veh is skip:
                continue
            if veh.s > s:
                if leader is None or veh.s < leader.s:
                    leader = veh
            elif veh.s < s or (veh.s == s and skip is not None):
                if follower is None or veh.s > follower.s:
                    follower = veh
        return leader, follower

    def neighbors_in_lane(self, lane: int, s: float, skip: Vehicle | None = None
                          ) -> tuple[Vehicle | None, Vehicle | None]:
        ordered = [v for v in self.vehicles if v.lane == lane]
        return self._leader_follower(ordered, s, skip)

    def density_per_km(self, lane: int | None = None) -> float:
        if lane is None:
            count = sum(1 for v in self.vehicles if v.lane != RAMP_LANE)
            lanes = 1
        else:
            count = sum(1 for v in self.vehicles if v.lane == lane)
            lanes = 1
        return 1000.0 * count / (self.network.lane_length * lanes)

    def mean_speed(self) -> float:
        main = [v.v for v in self.vehicles if v.lane != RAMP_LANE]
        return float(np.mean(main)) if main else 0.0

    # ------------------------------------------------------------------ agent

    def set_agent_action(self, accel: float, lane_cmd: int = 0) -> None:
        self._agent_accel = accel
        self._agent_lane_cmd = lane_cmd

    # ------------------------------------------------------------------- step

    def step(self) -> None:
        """Advance one dt: controller assignment, lane changes, accelerations,
        kinematics, merges, collisions, despawns, spawns."""
        dt = self.config.dt
        if self.step_index % self.steps_per_second == 0:
            self.spawn_step()

        if self.config.traffic_mode is TrafficMode.HIGH_FIDELITY:
            self._assign_frenet_controllers()

        lanes = self.lanes_sorted()
        self._lane_change_phase(lanes)

        lanes = self.lanes_sorted()
        self._acceleration_phase(lanes)

        for veh in self.vehicles:
            if veh.controller is Controller.FRENET_PLANNED:
                self._advance_frenet(veh, dt)
            else:
                self._integrate(veh, dt)

        self._apply_merges()
        self._handle_collisions()
        self._despawn()

        self.step_index += 1
        self.t = self.step_index * dt
        if self.trace is not None:
            for veh in self.vehicles:
                self.trace.append({"t": round(self.t, 6), "id": veh.vid, "lane": veh.lane,
                                   "s": veh.s, "v": veh.v, "a": veh.a})

    # ------------------------------------------------------------ step phases

    def _assign_frenet_controllers(self) -> None:
        agent = self.agent
        radius = self.config.planner.perception_radius
        for veh in self.vehicles:
            if veh.controller is Controller.AGENT or veh.lane == RAMP_LANE:
                continue
            near = agent is not None and abs(veh.s - agent.s) <= radius
            if near and veh.controller is Controller.RULE_BASED:
                veh.controller = Controller.FRENET_PLANNED
                veh.trajectory = None
                veh.traj_age = 0.0
                veh.fallback_brake = False
            elif not near and veh.controller is Controller.FRENET_PLANNED:
                veh.controller = Controller.RULE_BASED
                veh.trajectory = None
                veh.fallback_brake = False

    def _lane_change_phase(self, lanes: dict[int, list[Vehicle]]) -> None:
        two_plus = (self.network.kind is RoadKind.FREEWAY
                    and self.network.lane_count_main >= 2)

        # agent's commanded instantaneous change (two-lane road: "the other lane")
        if self.agent is not None and self._agent_lane_cmd and two_plus:
            new_lane = 1 - self.agent.lane
            self.agent.lane = new_lane
            self.agent.y = self.network.centerline(new_lane)
        self._agent_lane_cmd = 0

        if not two_plus:
            return

        proposals: list[tuple[Vehicle, int]] = []
        for veh in self.vehicles:
            if veh.controller is not Controller.RULE_BASED or veh.lane == RAMP_LANE:
                continue
            current = self._lane_context(lanes, veh.lane, veh)
            left_lane = veh.lane + 1 if veh.lane + 1 < self.network.lane_count_main else None
            right_lane = veh.lane - 1 if veh.lane - 1 >= 0 else None
            left = self._lane_context(lanes, left_lane, veh) if left_lane is not None else None
            right = self._lane_context(lanes, right_lane, veh) if right_lane is not None else None
            decision = decide_lane_change(veh.v, veh.length, veh.params.idm, veh.params.lc,
                                          veh.lc_state, current, left, right)
            if decision is LaneDecision.CHANGE_LEFT:
                proposals.append((veh, left_lane))
            elif decision is LaneDecision.CHANGE_RIGHT:
                proposals.append((veh, right_lane))

        # apply downstream-first so an upstream change sees the updated lane
        for veh, target in sorted(proposals, key=lambda p: -p[0].s):
            veh.lane = target
            veh.y = self.network.centerline(target)

    def _lane_context(self, lanes: dict[int, list[Vehicle]], lane: int,
                      veh: Vehicle) -> LaneContext:
        ordered = lanes.get(lane, [])
        leader, follower = self._leader_follower(ordered, veh.s, skip=veh)
        return LaneContext(
            lead_gap=(leader.rear - veh.s) if leader is not None else None,
            lead_speed=leader.v if leader is not None else None,
            lag_gap=(veh.rear - follower.s) if follower is not None else None,
        )

    def _acceleration_phase(self, lanes: dict[int, list[Vehicle]]) -> None:
        for veh in self.vehicles:
            if veh.controller is Controller.AGENT:
                veh.a = self._agent_accel
                continue
            if veh.controller is Controller.FRENET_PLANNED:
                continue  # acceleration comes from the trajectory
            ordered = lanes.get(veh.lane, [])
            leader, _ = self._leader_follower(ordered, veh.s, skip=veh)
            if leader is None:
                veh.a = idm_accel(veh.params.idm, veh.v)
            else:
                gap = leader.rear - veh.s
                if gap <= 0:
                    veh.a = veh.params.idm.a_min  # overlapping; collision handling removes
                else:
                    veh.a = idm_accel(veh.params.idm, veh.v, gap, leader.v)

    @staticmethod
    def _integrate(veh: Vehicle, dt: float) -> None:
        v_next = veh.v + veh.a * dt
        if v_next >= 0.0:
            veh.s += veh.v * dt + 0.5 * veh.a * dt * dt
            veh.v = v_next
        elif veh.a < 0.0:
            # stop inside the step: advance only the distance to standstill
            veh.s += 0.5 * veh.v * veh.v / (-veh.a)
            veh.v = 0.0
        else:
            veh.v = 0.0

    # ------------------------------------------------------------ frenet mode

    def _frenet_neighbors(self, veh: Vehicle) -> list[frenet.NeighborTrack]:
        out = []
        for other in self.vehicles:
            if other is veh:
                continue
            if abs(other.s - veh.s) > 80.0:
                continue
            if other.lane == RAMP_LANE and veh.lane != RAMP_LANE:
                continue
            out.append(frenet.NeighborTrack(s=other.s, v=other.v, y=other.y,
                                            length=other.length))
        return out

    def _replan(self, veh: Vehicle) -> None:
        state = frenet.FrenetState(s=veh.s, s_d=veh.v, s_dd=veh.a,
                                   d=veh.y, d_d=0.0, d_dd=0.0)
        if veh.trajectory is not None:
            prev = veh.trajectory.state_at(veh.traj_age)
            state = frenet.FrenetState(s=prev.s, s_d=prev.s_d, s_dd=prev.s_dd,
                                       d=prev.d, d_d=prev.d_d, d_dd=prev.d_dd)
        try:
            veh.trajectory = frenet.plan(
                state, ref_speed=veh.params.idm.v0, d_ref=self.network.centerline(veh.lane),
                centerlines=self.network.centerlines(),
                neighbors=self._frenet_neighbors(veh), cfg=self.config.planner,
                ego_length=veh.length)
            veh.traj_age = 0.0
            veh.fallback_brake = False
        except frenet.NoFeasibleTrajectory:
            veh.trajectory = None
            veh.traj_age = 0.0
            veh.fallback_brake = True

    def _advance_frenet(self, veh: Vehicle, dt: float) -> None:
        at_boundary = (veh.trajectory is None and not veh.fallback_brake) \
            or veh.traj_age + 1e-9 >= self.config.planner.replan_period
        if at_boundary:
            self._replan(veh)

        if veh.trajectory is None:
            if not veh.fallback_brake:
                raise MissingTrajectory(f"vehicle {veh.vid} has no trajectory at replan boundary")
            veh.a = veh.params.idm.a_min
            self._integrate(veh, dt)
            veh.traj_age += dt
            return

        veh.traj_age += dt
        st = veh.trajectory.state_at(veh.traj_age)
        veh.a = st.s_dd
        veh.v = max(0.0, st.s_d)
        veh.s = st.s
        veh.y = st.d
        # assigned lane follows the nearest centerline
        lane = int(round(veh.y / self.network.lane_width))
        veh.lane = min(max(lane, 0), self.network.lane_count_main - 1)

    # --------------------------------------------------------------- cleanup

    def _apply_merges(self) -> None:
        merge = self.network.merge_point_s
        if merge is None:
            return
        for veh in self.vehicles:
            if veh.lane == RAMP_LANE and veh.s >= merge:
                veh.lane = 0
                veh.y = self.network.centerline(0)

    def detect_collisions(self) -> list[tuple[int, int]]:
        """Same-lane pairs with negative bumper gap."""
        pairs = []
        for lane, ordered in self.lanes_sorted().items():
            for follower, leader in zip(ordered, ordered[1:]):
                if leader.rear - follower.s < 0.0:
                    pairs.append((follower.vid, leader.vid))
        return pairs

    def _handle_collisions(self) -> None:
        pairs = self.detect_collisions()
        if not pairs:
            return
        by_id = {v.vid: v for v in self.vehicles}
        to_remove = set()
        for a, b in pairs:
            va, vb = by_id[a], by_id[b]
            self.collision_events.append(CollisionEvent(self.t, a, b, va.lane))
            if va.controller is Controller.AGENT or vb.controller is Controller.AGENT:
                self.agent_collided = True  # episode ends; world keeps both bodies
            else:
                to_remove.update((a, b))
        if to_remove:
            self.vehicles = [v for v in self.vehicles if v.vid not in to_remove]
            self.removed_in_collisions += len(to_remove)

    def _despawn(self) -> None:
        kept = []
        for veh in self.vehicles:
            if veh.rear > self.network.lane_length:
                self.despawned += 1
                if veh is self.agent:
                    self.agent = None
            else:
                kept.append(veh)
        self.vehicles = kept

    def spawn_step(self) -> None:
        """Per entry lane at a 1 s boundary: Bernoulli(phi) attempt, blocked if
        the entry stretch is occupied."""
        phi = self.config.spawn_probability
        for lane in self.entry_lanes():
            u = self.rng.spawn.random()
            if u >= phi:
                continue
            block = self.config.entry_block_distance
            occupied = any(v.lane == lane and v.rear < block for v in self.vehicles)
            if occupied:
                self.blocked_spawns += 1
                continue
            params = self._new_params()
            v_entry = params.idm.v0
            if self.config.entry_speed_capped:
                leader, _ = self.neighbors_in_lane(lane, VEHICLE_LENGTH)
                if leader is not None:
                    v_entry = safe_entry_speed(params.idm, leader.rear - VEHICLE_LENGTH, leader.v)
            self.add_vehicle(lane, VEHICLE_LENGTH, v_entry, params)


def write_jsonl(records: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
