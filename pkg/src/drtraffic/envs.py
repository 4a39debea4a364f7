"""On-ramp merging and two-lane freeway RL environments.

Both are reset/step state machines over a World. Step returns the raw
observation (physical units); `normalize` maps it to the learner's scale.
Merging distances use the downstream-positive convention d = s - merge_point,
which is the one that makes the mid-gap measure w and the ordering
d_p2 >= d_p1 >= d_m >= d_f1 >= d_f2 come out right.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .randomization import default_driver_params
from .rng import RngBundle
from .scenario import (RAMP_LANE, Controller, RoadKind, RoadNetwork, SimConfig,
                       TrafficMode, Vehicle, World, build_network)

ACCEL_NORM = 4.5   # observation normalizer for accelerations


class EpisodeFinished(RuntimeError):
    pass


class Outcome(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    STOPPED = "stopped"


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    reward_terms: dict[str, float]
    done: bool
    outcome: Outcome


# --------------------------------------------------------------------- merging

MERGING_OBS_DIM = 11

# reward constants for the merging vehicle
W_M = -0.015
W_B = -0.015
W_J = -0.015
DV_MAX = 5.0          # m/s
JERK_MAX = 3.0        # m/s^3
R_STOP = -0.5
R_COLLISION_MERGE = -1.0
R_SUCCESS_MERGE = 1.0
ACCEL_BOUND_NORM = max(4.5, 2.6)  # max(|a_min|, a_max) with default bounds


@dataclass
class MergingConfig:
    sim: SimConfig = field(default_factory=lambda: SimConfig(episode_timeout=60.0))
    sensing_range: float = 200.0
    action_low: float = -4.5
    action_high: float = 2.5
    ego_max_speed: float = 16.89
    ego_entry_speed: float = 8.33
    warm_settle_seconds: float = 2.0


class MergingEnv:
    obs_dim = MERGING_OBS_DIM
    action_dim = 1

    def __init__(self, config: MergingConfig | None = None,
                 network: RoadNetwork | None = None):
        self.config = config or MergingConfig()
        self.network = network or build_network(RoadKind.MERGING)
        self.world: World | None = None
        self.done = True
        self.outcome = Outcome.RUNNING
        self._prev_accel = 0.0
        self._episode_t = 0.0
        self._episode = 0

    # hybrid/continuous encoding used by the learner
    def action_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([self.config.action_low]), np.array([self.config.action_high]))

    def reset(self, seed: int, episode: int = 0) -> np.ndarray:
        """Warm up main-road flow, inject the agent on the ramp, drive it under
        the car-following law up to the control-zone entry, hand over control."""
        cfg = self.config
        rng = RngBundle(seed, episode)
        self.world = World(self.network, replace(cfg.sim), rng)
        self.world.prefill(settle_seconds=cfg.warm_settle_seconds)

        ramp_s = self.network.ramp_start_s + 5.0  # front bumper, rear at ramp start
        agent = self.world.add_vehicle(RAMP_LANE, ramp_s, cfg.ego_entry_speed,
                                       params=default_driver_params(),
                                       controller=Controller.RULE_BASED)
        self.world.agent = agent  # ego for perception radius even before handover
        zone_start = self.network.control_zone[0]
        guard = 0
        while agent.s < zone_start:
            self.world.step()
            guard += 1
            if guard > 10000:
                raise RuntimeError("agent never reached the control zone")
        agent.controller = Controller.AGENT
        self.world.agent = agent

        self.done = False
        self.outcome = Outcome.RUNNING
        self._prev_accel = agent.a
        self._episode_t = 0.0
        self._episode = episode
        return self.observe()

    def reset_from_world(self, world: World) -> np.ndarray:
        """Adopt a prepared world whose agent vehicle is already placed
        (scripted scenes, tests, replays). Control starts immediately."""
        if world.agent is None:
            raise ValueError("world has no agent vehicle")
        world.agent.controller = Controller.AGENT
        self.world = world
        self.done = False
        self.outcome = Outcome.RUNNING
        self._prev_accel = world.agent.a
        self._episode_t = 0.0
        return self.observe()

    # ------------------------------------------------------------ observation

    def _projected_neighbors(self):
        """Two leaders and two followers of the agent's main-road projection,
        limited to the sensing range."""
        agent = self.world.agent
        sense = self.config.sensing_range
        mains = [v for v in self.world.vehicles if v.lane == 0 and v is not agent]
        leaders = sorted((v for v in mains if v.s >= agent.s and v.s - agent.s <= sense),
                         key=lambda v: v.s)
        followers = sorted((v for v in mains if v.s < agent.s and agent.s - v.s <= sense),
                           key=lambda v: -v.s)
        p1 = leaders[0] if len(leaders) > 0 else None
        p2 = leaders[1] if len(leaders) > 1 else None
        f1 = followers[0] if len(followers) > 0 else None
        f2 = followers[1] if len(followers) > 1 else None
        return p1, p2, f1, f2

    def observe(self) -> np.ndarray:
        agent = self.world.agent
        merge = self.network.merge_point_s
        sense = self.config.sensing_range
        d_m = agent.s - merge
        v_m = agent.v
        p1, p2, f1, f2 = self._projected_neighbors()

        def lead(slot, fallback_d):
            if slot is None:
                return fallback_d, v_m
            return slot.s - merge, slot.v

        d_p1, v_p1 = lead(p1, d_m + sense)
        d_p2, v_p2 = lead(p2, max(d_p1, d_m) + sense)
        d_f1, v_f1 = lead(f1, d_m - sense)
        d_f2, v_f2 = lead(f2, min(d_f1, d_m) - sense)
        return np.array([d_p2, v_p2, d_p1, v_p1, d_m, v_m, agent.a,
                         d_f1, v_f1, d_f2, v_f2], dtype=float)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        out = obs.astype(float).copy()
        dist_idx = [0, 2, 4, 7, 9]
        speed_idx = [1, 3, 5, 8, 10]
        out[dist_idx] /= self.config.sensing_range
        out[speed_idx] /= 16.89
        out[6] /= ACCEL_NORM
        return out

    # ----------------------------------------------------------------- reward

    def _reward(self, obs: np.ndarray, collided: bool, succeeded: bool,
                f1: Vehicle | None) -> tuple[float, dict[str, float]]:
        d_p2, v_p2, d_p1, v_p1, d_m, v_m, a_m, d_f1, v_f1, d_f2, v_f2 = obs
        l_p1 = l_m = 5.0

        denom = abs(d_p1 - d_f1 - l_p1 - l_m)
        w = ((abs(d_p1 - d_m - l_p1) - abs(d_m - d_f1 - l_m)) / denom) if denom > 1e-9 else 0.0
        r_m = W_M * (abs(w) + abs(0.5 * (v_p1 + v_f1) - v_m) / DV_MAX)

        r_b = 0.0
        if f1 is not None and f1.a < 0.0:
            zone = self.network.control_zone
            if zone[0] <= f1.s <= zone[1]:
                r_b = W_B * abs(f1.a) / ACCEL_BOUND_NORM

        jerk = (a_m - self._prev_accel) / self.world.config.dt
        r_j = W_J * abs(jerk) / JERK_MAX

        terms = {
            "R_m": r_m,
            "R_b": r_b,
            "R_j": r_j,
            "R_stop": R_STOP if v_m == 0.0 else 0.0,
            "R_success": R_SUCCESS_MERGE if succeeded else 0.0,
            "R_collision": R_COLLISION_MERGE if collided else 0.0,
        }
        return sum(terms.values()), terms

    # ------------------------------------------------------------------- step

    def clamp_action(self, acc: float) -> float:
        cfg = self.config
        acc = min(max(float(acc), cfg.action_low), cfg.action_high)
        agent = self.world.agent
        dt = self.world.config.dt
        # respect the ego speed ceiling
        if agent.v + acc * dt > cfg.ego_max_speed:
            acc = (cfg.ego_max_speed - agent.v) / dt
        return acc

    def step(self, acc: float) -> StepResult:
        if self.done:
            raise EpisodeFinished("merging episode already finished")
        world = self.world
        agent = world.agent
        applied = self.clamp_action(acc)
        world.set_agent_action(applied)
        world.step()
        self._episode_t += world.config.dt

        collided = world.agent_collided
        zone_end = self.network.control_zone[1]
        succeeded = (not collided) and agent.s >= zone_end

        obs = self.observe()
        p1, p2, f1, f2 = self._projected_neighbors()
        reward, terms = self._reward(obs, collided, succeeded, f1)
        self._prev_accel = obs[6]

        if collided:
            self.outcome = Outcome.COLLISION
        elif succeeded:
            self.outcome = Outcome.SUCCESS
        elif self._episode_t >= self.config.sim.episode_timeout:
            self.outcome = Outcome.STOPPED if agent.v == 0.0 else Outcome.TIMEOUT
        else:
            self.outcome = Outcome.RUNNING
        self.done = self.outcome is not Outcome.RUNNING
        return StepResult(obs, reward, terms, self.done, self.outcome)

    def step_vec(self, vec: np.ndarray) -> StepResult:
        return self.step(float(vec[0]))


# --------------------------------------------------------------------- freeway

FREEWAY_OBS_DIM = 10

W0 = -5.0       # lane change with the new-lane leader inside d_safe
W1 = -2.0       # lane change with it outside d_safe
W2 = -10.0      # following-distance shortfall
W3 = -0.005     # jerk
W4 = 1.0        # overtaking-speed reward branch
W5 = -0.5       # above v_safe
W6 = -0.5       # below v_stable
V_SAFE = 16.89
V_STABLE = 8.89
D_SAFE = 25.0
D_STAR = 2.5
R_COLLISION_FREEWAY = -200.0


@dataclass
class FreewayConfig:
    sim: SimConfig = field(default_factory=lambda: SimConfig(
        spawn_probability=0.14, episode_timeout=120.0))
    sensing_range: float = 100.0
    action_low: float = -4.5
    action_high: float = 2.6
    ego_max_speed: float = V_SAFE
    ego_entry_speed: float = V_STABLE
    warm_settle_seconds: float = 2.0


class FreewayEnv:
    obs_dim = FREEWAY_OBS_DIM
    action_dim = 3  # acceleration + one weight per discrete action (keep, change)

    def __init__(self, config: FreewayConfig | None = None,
                 network: RoadNetwork | None = None):
        self.config = config or FreewayConfig()
        self.network = network or build_network(RoadKind.FREEWAY)
        self.world: World | None = None
        self.done = True
        self.outcome = Outcome.RUNNING
        self._prev_accel = 0.0
        self._episode_t = 0.0

    def action_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        return (np.array([cfg.action_low, -1.0, -1.0]),
                np.array([cfg.action_high, 1.0, 1.0]))

    def reset(self, seed: int, episode: int = 0) -> np.ndarray:
        cfg = self.config
        rng = RngBundle(seed, episode)
        self.world = World(self.network, replace(cfg.sim), rng)
        self.world.prefill(settle_seconds=cfg.warm_settle_seconds)

        lane = self._clearest_entry_lane()
        guard = 0
        while self._entry_gap(lane) < 2.5 * cfg.sim.entry_block_distance:
            self.world.step()
            lane = self._clearest_entry_lane()
            guard += 1
            if guard > 5000:
                break
        agent = self.world.add_vehicle(lane, 5.0, cfg.ego_entry_speed,
                                       params=default_driver_params(),
                                       controller=Controller.AGENT)
        self.done = False
        self.outcome = Outcome.RUNNING
        self._prev_accel = 0.0
        self._episode_t = 0.0
        return self.observe()

    def reset_from_world(self, world: World) -> np.ndarray:
        """Adopt a prepared world whose agent vehicle is already placed."""
        if world.agent is None:
            raise ValueError("world has no agent vehicle")
        world.agent.controller = Controller.AGENT
        self.world = world
        self.done = False
        self.outcome = Outcome.RUNNING
        self._prev_accel = world.agent.a
        self._episode_t = 0.0
        return self.observe()

    def _entry_gap(self, lane: int) -> float:
        rears = [v.rear for v in self.world.vehicles if v.lane == lane]
        return min(rears) if rears else float("inf")

    def _clearest_entry_lane(self) -> int:
        lanes = self.network.main_lanes()
        return max(lanes, key=lambda ln: (self._entry_gap(ln), -ln))

    # ------------------------------------------------------------ observation

    def _gaps(self):
        """(leader gap, leader, follower gap, follower) per own/adjacent lane."""
        agent = self.world.agent
        sense = self.config.sensing_range

        def scan(lane):
            leader, follower = self.world.neighbors_in_lane(lane, agent.s, skip=agent)
            lead_gap = lead = None
            if leader is not None:
                g = leader.rear - agent.s
                if g <= sense:
                    lead_gap, lead = max(g, 0.0), leader
            lag_gap = lag = None
            if follower is not None:
                g = agent.rear - follower.s
                if g <= sense:
                    lag_gap, lag = max(g, 0.0), follower
            return lead_gap, lead, lag_gap, lag

        own = scan(agent.lane)
        adj = scan(1 - agent.lane)
        return own, adj

    def observe(self) -> np.ndarray:
        agent = self.world.agent
        sense = self.config.sensing_range
        (dp, p, df, f), (dap, ap, daf, af) = self._gaps()
        v = agent.v

        def val(gap, veh):
            return (gap, veh.v) if veh is not None else (sense, v)

        d_p, v_p = val(dp, p)
        d_f, v_f = val(df, f)
        d_adj_p, v_adj_p = val(dap, ap)
        d_adj_f, v_adj_f = val(daf, af)
        return np.array([d_p, d_f, d_adj_p, d_adj_f,
                         v_p, v_f, v_adj_p, v_adj_f, v, agent.a], dtype=float)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        out = obs.astype(float).copy()
        out[0:4] /= self.config.sensing_range
        out[4:9] /= V_SAFE
        out[9] /= ACCEL_NORM
        return out

    # ----------------------------------------------------------------- reward

    def _reward(self, obs: np.ndarray, lane_changed: bool, collided: bool
                ) -> tuple[float, dict[str, float]]:
        d_p = obs[0]
        v_ego = obs[8]
        a_t = obs[9]

        if lane_changed:
            r_act = W0 if d_p < D_SAFE else W1
        else:
            r_act = 0.0

        r_distance = W2 * abs((d_p - D_SAFE) / D_SAFE) if d_p < D_SAFE else 0.0

        r_jerk = W3 * abs((a_t - self._prev_accel) / 0.1)

        # speed branches gate on d_p < d_safe + d*, but the dead band
        # [d_safe, d_safe + d*] waives R_v and R_distance entirely
        if d_p < D_SAFE:
            if V_STABLE < v_ego < V_SAFE:
                r_v = W4 * abs((v_ego - V_STABLE) / V_SAFE)
            elif v_ego > V_SAFE:
                r_v = W5 * abs((v_ego - V_SAFE) / V_SAFE)
            elif v_ego < V_STABLE:
                r_v = W6 * abs((v_ego - V_STABLE) / V_STABLE)
            else:
                r_v = 0.0
        else:
            r_v = 0.0

        terms = {
            "R_act": r_act,
            "R_distance": r_distance,
            "R_jerk": r_jerk,
            "R_v": r_v,
            "R_collision": R_COLLISION_FREEWAY if collided else 0.0,
        }
        return sum(terms.values()), terms

    # ------------------------------------------------------------------- step

    def clamp_action(self, acc: float) -> float:
        cfg = self.config
        acc = min(max(float(acc), cfg.action_low), cfg.action_high)
        agent = self.world.agent
        dt = self.world.config.dt
        if agent.v + acc * dt > cfg.ego_max_speed:
            acc = (cfg.ego_max_speed - agent.v) / dt
        return acc

    def step(self, acc: float, lane_cmd: int = 0) -> StepResult:
        if self.done:
            raise EpisodeFinished("freeway episode already finished")
        if lane_cmd not in (0, 1):
            raise ValueError("lane_cmd must be 0 (keep) or 1 (change)")
        world = self.world
        agent = world.agent
        applied = self.clamp_action(acc)
        world.set_agent_action(applied, lane_cmd)
        world.step()
        self._episode_t += world.config.dt

        collided = world.agent_collided
        obs = self.observe()
        reward, terms = self._reward(obs, lane_changed=bool(lane_cmd), collided=collided)
        self._prev_accel = obs[9]

        if collided:
            self.outcome = Outcome.COLLISION
        elif agent.s >= self.network.lane_length:
            self.outcome = Outcome.SUCCESS
        elif self._episode_t >= self.config.sim.episode_timeout:
            self.outcome = Outcome.TIMEOUT
        else:
            self.outcome = Outcome.RUNNING
        self.done = self.outcome is not Outcome.RUNNING
        return StepResult(obs, reward, terms, self.done, self.outcome)

    def step_vec(self, vec: np.ndarray) -> StepResult:
        lane_cmd = int(np.argmax(vec[1:3]))  # ties resolve to keep (index 0)
        return self.step(float(vec[0]), lane_cmd)
