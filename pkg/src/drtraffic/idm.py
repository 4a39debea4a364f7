"""Intelligent Driver Model car-following law.

Acceleration for the ego vehicle given its speed, the bumper-to-bumper gap to
the leader, and the speed difference. Used by every rule-based vehicle; also
the fallback controller for planner failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class NonPositiveGap(ValueError):
    """A leader exists but the gap is <= 0; the caller should have treated this as a collision."""


@dataclass
class IdmParams:
    a_max: float = 2.6    # maximum acceleration [m/s^2]
    a_min: float = -4.5   # braking bound (clamp), negative [m/s^2]
    b: float = 4.5        # comfortable deceleration in the desired-gap term [m/s^2]
    v0: float = 8.33      # desired speed [m/s]
    delta: float = 4.0    # acceleration exponent
    T: float = 1.0        # bumper-to-bumper time gap [s]
    s0: float = 2.5       # minimum gap [m]

    def validate(self) -> "IdmParams":
        if not (self.a_max > 0 and self.b > 0 and self.a_min < 0 and self.v0 > 0
                and self.T >= 0 and self.s0 > 0 and self.delta > 0):
            raise ValueError(f"invalid IDM parameters: {self}")
        return self


def desired_gap(p: IdmParams, v: float, dv: float) -> float:
    """Desired following distance s* at speed v and approach rate dv = v - v_leader."""
    dynamic = v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b))
    return p.s0 + max(0.0, dynamic)


def idm_accel(p: IdmParams, v: float, gap: float | None = None,
              v_leader: float | None = None) -> float:
    """Acceleration for speed v, optionally interacting with a leader.

    gap is bumper-to-bumper and must be > 0 when a leader is present. The
    result is clamped to [a_min, a_max].
    """
    free = 1.0 - (v / p.v0) ** p.delta
    if v_leader is None:
        a = p.a_max * free
    else:
        if gap is None or gap <= 0.0:
            raise NonPositiveGap(f"gap={gap} with a leader present")
        s_star = desired_gap(p, v, v - v_leader)
        a = p.a_max * (free - (s_star / gap) ** 2)
    if a > p.a_max:
        return p.a_max
    if a < p.a_min:
        return p.a_min
    return a


def safe_entry_speed(p: IdmParams, gap: float | None, v_leader: float | None,
                     iters: int = 40) -> float:
    """Largest speed <= v0 whose desired gap fits inside the available gap.

    Used when inserting a vehicle behind a leader: bisect on v such that
    s*(v, v - v_leader) <= gap. With no leader (or a huge gap) this is v0.
    """
    if v_leader is None or gap is None:
        return p.v0
    if gap <= p.s0:
        return max(0.0, min(p.v0, v_leader))
    if desired_gap(p, p.v0, p.v0 - v_leader) <= gap:
        return p.v0
    lo, hi = 0.0, p.v0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if desired_gap(p, mid, mid - v_leader) <= gap:
            lo = mid
        else:
            hi = mid
    return lo
