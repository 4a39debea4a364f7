"""Frenet-frame trajectory sampling for the high-fidelity traffic mode.

Vehicles near the agent follow minimum-cost polynomial trajectories instead of
the car-following law: a quintic in lateral offset d(t) and a quartic in
longitudinal position s(t) (velocity-keeping form, no end-position
constraint). A fan of candidates over end offsets and end speeds is scored on
smoothness, stability, collision risk, speed deviation and lateral deviation,
filtered by dynamics limits, and the cheapest feasible one is executed until
the next replan.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SingularSystem(ValueError):
    pass


class NoFeasibleTrajectory(RuntimeError):
    """Every candidate violated the limits or overlapped a predicted neighbor."""


@dataclass
class FrenetState:
    s: float
    s_d: float
    s_dd: float
    d: float
    d_d: float
    d_dd: float


@dataclass
class PlannerConfig:
    perception_radius: float = 50.0   # m around the agent where this mode is active
    replan_period: float = 0.5        # s between replans
    horizon: float = 5.0              # s trajectory duration
    sample_dt: float = 0.1            # s sampling step along the horizon
    lateral_offsets: tuple = (-0.5, 0.0, 0.5)        # m around each lane centerline
    speed_offsets: tuple = (-2.0, -1.0, 0.0, 1.0)    # m/s around the reference speed
    w_smooth: float = 1.0
    w_stab: float = 1.0
    w_coll: float = 10.0
    w_speed: float = 1.0
    w_lat: float = 1.0
    max_accel: float = 4.5            # |(s_dd, d_dd)| bound [m/s^2]
    max_speed: float = 20.0           # longitudinal speed bound [m/s]
    max_curvature: float = 0.2        # 1/m, turning-radius proxy
    risk_scale: float = 5.0           # g0 in exp(-gap/g0)
    lateral_band: float = 1.9         # m, lateral distance below which two bodies can collide


@dataclass
class CandidateTrajectory:
    lateral_coeffs: np.ndarray        # (6,)
    longitudinal_coeffs: np.ndarray   # (5,)
    duration: float
    t: np.ndarray                     # (T,)
    s: np.ndarray
    s_d: np.ndarray
    s_dd: np.ndarray
    s_ddd: np.ndarray
    d: np.ndarray
    d_d: np.ndarray
    d_dd: np.ndarray
    d_ddd: np.ndarray
    grid_index: int
    end_d: float
    end_speed: float
    cost_terms: dict = field(default_factory=dict)
    total_cost: float = float("nan")
    feasible: bool = False

    def state_at(self, tau: float) -> FrenetState:
        cl, cn = self.lateral_coeffs, self.longitudinal_coeffs
        return FrenetState(
            s=_polyval(cn, tau), s_d=_polyval(_deriv(cn), tau), s_dd=_polyval(_deriv(cn, 2), tau),
            d=_polyval(cl, tau), d_d=_polyval(_deriv(cl), tau), d_dd=_polyval(_deriv(cl, 2), tau),
        )


def _polyval(coeffs: np.ndarray, t) -> float:
    # coefficients in increasing order: c0 + c1 t + c2 t^2 ...
    out = 0.0
    for c in coeffs[::-1]:
        out = out * t + c
    return out


def _deriv(coeffs: np.ndarray, order: int = 1) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = c[1:] * np.arange(1, len(c))
    return c


def solve_lateral_quintic(d0: tuple, d1: tuple, duration: float) -> np.ndarray:
    """Quintic matching position/velocity/acceleration at both ends."""
    if duration <= 0.0:
        raise SingularSystem("duration must be > 0")
    T = float(duration)
    a0, a1 = d0[0], d0[1]
    a2 = d0[2] / 2.0
    A = np.array([
        [T ** 3, T ** 4, T ** 5],
        [3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
        [6 * T, 12 * T ** 2, 20 * T ** 3],
    ])
    b = np.array([
        d1[0] - (a0 + a1 * T + a2 * T ** 2),
        d1[1] - (a1 + 2 * a2 * T),
        d1[2] - 2 * a2,
    ])
    a3, a4, a5 = np.linalg.solve(A, b)
    return np.array([a0, a1, a2, a3, a4, a5])


def solve_longitudinal_quartic(s0: tuple, s1: tuple, duration: float) -> np.ndarray:
    """Quartic matching start position/velocity/acceleration and end velocity/acceleration."""
    if duration <= 0.0:
        raise SingularSystem("duration must be > 0")
    T = float(duration)
    a0, a1 = s0[0], s0[1]
    a2 = s0[2] / 2.0
    A = np.array([
        [3 * T ** 2, 4 * T ** 3],
        [6 * T, 12 * T ** 2],
    ])
    b = np.array([
        s1[0] - (a1 + 2 * a2 * T),
        s1[1] - 2 * a2,
    ])
    a3, a4 = np.linalg.solve(A, b)
    return np.array([a0, a1, a2, a3, a4])


def _sample_grid(cfg: PlannerConfig) -> np.ndarray:
    n = int(round(cfg.horizon / cfg.sample_dt))
    return np.arange(n + 1) * cfg.sample_dt


def _horner_rows(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate row polynomials (increasing-order coefficients) on grid t -> (rows, T)."""
    out = np.zeros((coeffs.shape[0], len(t)))
    for k in range(coeffs.shape[1] - 1, -1, -1):
        out = out * t + coeffs[:, k:k + 1]
    return out


def _deriv_rows(coeffs: np.ndarray, order: int) -> np.ndarray:
    c = coeffs
    for _ in range(order):
        c = c[:, 1:] * np.arange(1, c.shape[1])
    return c


def generate_candidates(current: FrenetState, ref_speed: float, cfg: PlannerConfig,
                        centerlines: list[float]) -> list[CandidateTrajectory]:
    """Cartesian fan of end offsets (per centerline) x end speeds.

    End lateral velocity/acceleration are zero (parallel to the centerline);
    end longitudinal acceleration is zero. Grid order is centerline-major,
    then lateral offset, then speed offset; that order is the deterministic
    tie-break used by plan().
    """
    t = _sample_grid(cfg)
    end_ds = [c + off for c in sorted(centerlines) for off in cfg.lateral_offsets]
    end_vs = [max(0.0, ref_speed + dv) for dv in cfg.speed_offsets]

    lat_coeffs = np.vstack([
        solve_lateral_quintic((current.d, current.d_d, current.d_dd), (d1, 0.0, 0.0),
                              cfg.horizon)
        for d1 in end_ds
    ])
    lon_coeffs = np.vstack([
        solve_longitudinal_quartic((current.s, current.s_d, current.s_dd), (v1, 0.0),
                                   cfg.horizon)
        for v1 in end_vs
    ])

    d_rows = [_horner_rows(_deriv_rows(lat_coeffs, k) if k else lat_coeffs, t) for k in range(4)]
    s_rows = [_horner_rows(_deriv_rows(lon_coeffs, k) if k else lon_coeffs, t) for k in range(4)]

    cands: list[CandidateTrajectory] = []
    idx = 0
    for li, d1 in enumerate(end_ds):
        for vi, v1 in enumerate(end_vs):
            cands.append(CandidateTrajectory(
                lateral_coeffs=lat_coeffs[li], longitudinal_coeffs=lon_coeffs[vi],
                duration=cfg.horizon, t=t,
                s=s_rows[0][vi], s_d=s_rows[1][vi], s_dd=s_rows[2][vi], s_ddd=s_rows[3][vi],
                d=d_rows[0][li], d_d=d_rows[1][li], d_dd=d_rows[2][li], d_ddd=d_rows[3][li],
                grid_index=idx, end_d=d1, end_speed=v1,
            ))
            idx += 1
    return cands


@dataclass
class NeighborTrack:
    """Constant-velocity prediction of one surrounding vehicle."""
    s: float        # front-bumper position [m]
    v: float        # speed [m/s]
    y: float        # lateral position [m]
    length: float   # body length [m]


def _risk_profile(cand_s: np.ndarray, cand_d: np.ndarray, t: np.ndarray,
                  neighbors: list[NeighborTrack], ego_length: float,
                  cfg: PlannerConfig) -> float:
    """Soft collision risk: sum over samples of exp(-gap/g0) to the nearest
    laterally-overlapping neighbor; inf on predicted body overlap."""
    if not neighbors:
        return 0.0
    total = 0.0
    for nb in neighbors:
        ns = nb.s + nb.v * t
        lateral_hit = np.abs(nb.y - cand_d) < cfg.lateral_band
        if not lateral_hit.any():
            continue
        ahead_gap = (ns - nb.length) - cand_s      # neighbor leads
        behind_gap = (cand_s - ego_length) - ns    # ego leads
        gap = np.maximum(ahead_gap, behind_gap)
        gap = np.where(lateral_hit, gap, np.inf)
        if (gap < 0.0).any():
            return float("inf")
        total += float(np.sum(np.where(np.isfinite(gap), np.exp(-gap / cfg.risk_scale), 0.0)))
    return total


def score_candidate(traj: CandidateTrajectory, neighbors: list[NeighborTrack],
                    ref_speed: float, d_ref: float, cfg: PlannerConfig,
                    ego_length: float = 5.0) -> CandidateTrajectory:
    """Fill cost terms, total cost and the feasibility flag in place."""
    speed_sq = traj.s_d ** 2 + traj.d_d ** 2
    heading = np.arctan2(traj.d_d, traj.s_d)
    denom = np.maximum(speed_sq ** 1.5, 1e-9)
    curvature = (traj.s_d * traj.d_dd - traj.d_d * traj.s_dd) / denom

    accel = np.hypot(traj.s_dd, traj.d_dd)
    jerk = np.hypot(traj.s_ddd, traj.d_ddd)

    smoothness = float(np.mean(np.abs(heading)) + np.mean(np.abs(curvature)))
    stability = float(np.mean(accel) + np.mean(jerk))
    collision_risk = _risk_profile(traj.s, traj.d, traj.t, neighbors, ego_length, cfg)
    speed_dev = float(np.mean(np.abs(traj.s_d - ref_speed)))
    lateral_dev = float(np.mean(np.abs(traj.d - d_ref)))

    traj.cost_terms = {
        "smoothness": smoothness,
        "stability": stability,
        "collision_risk": collision_risk,
        "speed_dev": speed_dev,
        "lateral_dev": lateral_dev,
    }
    traj.total_cost = (cfg.w_smooth * smoothness + cfg.w_stab * stability
                       + cfg.w_coll * collision_risk + cfg.w_speed * speed_dev
                       + cfg.w_lat * lateral_dev)
    traj.feasible = (
        np.isfinite(collision_risk)
        and float(np.max(accel)) <= cfg.max_accel
        and float(np.max(traj.s_d)) <= cfg.max_speed
        and float(np.min(traj.s_d)) >= -1e-9
        and float(np.max(np.abs(curvature))) <= cfg.max_curvature
    )
    return traj


def plan(current: FrenetState, ref_speed: float, d_ref: float, centerlines: list[float],
         neighbors: list[NeighborTrack], cfg: PlannerConfig,
         ego_length: float = 5.0) -> CandidateTrajectory:
    """Minimum-cost feasible candidate; ties break toward the lower grid index."""
    best = None
    for cand in generate_candidates(current, ref_speed, cfg, centerlines):
        score_candidate(cand, neighbors, ref_speed, d_ref, cfg, ego_length)
        if not cand.feasible:
            continue
        if best is None or cand.total_cost < best.total_cost:
            best = cand
    if best is None:
        raise NoFeasibleTrajectory(
            f"no feasible candidate at s={current.s:.1f}, v={current.s_d:.1f}")
    return best
