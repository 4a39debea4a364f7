"""SL2015-style lane changing.

A lane change needs two things: accumulated speed-gain profit above a
threshold (scaled by lcSpeedGain) and acceptable lead/lag gaps in the target
lane (the required safety distance shrinks by 1/lcAssertive). Profit is
accumulated per candidate lane; negative instantaneous profit halves the
accumulator instead of subtracting.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .idm import IdmParams, idm_accel

ANTICIPATION_HORIZON = 1.0  # s of IDM look-ahead when estimating lane speeds


class LaneDecision(enum.Enum):
    STAY = 0
    CHANGE_LEFT = 1
    CHANGE_RIGHT = 2


@dataclass
class Sl2015Params:
    a1: float = 1.0            # low-speed safety factor [s]
    a2: float = 2.0            # high-speed safety factor [s]
    v_c: float = 16.67         # regime threshold speed [m/s]
    lc_speed_gain: float = 1.0  # eagerness multiplier, >= 0
    lc_assertive: float = 1.0   # gap-acceptance divisor, >= 1
    profit_threshold: float = 1.0

    def validate(self) -> "Sl2015Params":
        if not (self.a1 > 0 and self.a2 > 0 and self.v_c > 0
                and self.lc_speed_gain >= 0 and self.lc_assertive >= 1):
            raise ValueError(f"invalid SL2015 parameters: {self}")
        return self


@dataclass
class LaneChangeState:
    """Per-vehicle cumulative profit, one accumulator per candidate direction."""
    cum_left: float = 0.0
    cum_right: float = 0.0


@dataclass
class LaneContext:
    """What the deciding vehicle sees in one lane: bumper gaps and the leader's speed."""
    lead_gap: float | None = None    # None = no leader
    lead_speed: float | None = None
    lag_gap: float | None = None     # None = no follower


def lc_safety_distance(p: Sl2015Params, v: float, l_veh: float) -> float:
    """Required clearance for a lane change at speed v."""
    factor = p.a1 if v <= p.v_c else p.a2
    return v * factor + 2.0 * l_veh


def lane_profit(v_target_lane: float, v_safe_current: float, v_max_current: float) -> float:
    """Relative speed gain of moving to the target lane."""
    return (v_target_lane - v_safe_current) / v_max_current


def update_cumulative_profit(cumulative: float, b_ln: float) -> float:
    """Accumulate positive profit; halve on negative; hold on zero."""
    if b_ln > 0.0:
        return cumulative + b_ln
    if b_ln < 0.0:
        return cumulative / 2.0
    return cumulative


def anticipated_speed(idm: IdmParams, v: float, ctx: LaneContext) -> float:
    """Speed the vehicle expects to reach in a lane after a short IDM horizon."""
    if ctx.lead_gap is None or ctx.lead_gap <= 0.0:
        a = idm_accel(idm, v)
    else:
        a = idm_accel(idm, v, ctx.lead_gap, ctx.lead_speed)
    return min(max(v + a * ANTICIPATION_HORIZON, 0.0), idm.v0)


def gaps_acceptable(p: Sl2015Params, v: float, l_veh: float, ctx: LaneContext) -> bool:
    required = lc_safety_distance(p, v, l_veh) / p.lc_assertive
    lead_ok = ctx.lead_gap is None or ctx.lead_gap >= required
    lag_ok = ctx.lag_gap is None or ctx.lag_gap >= required
    return lead_ok and lag_ok


def decide_lane_change(
    v: float,
    l_veh: float,
    idm: IdmParams,
    p: Sl2015Params,
    state: LaneChangeState,
    current: LaneContext,
    left: LaneContext | None,
    right: LaneContext | None,
) -> LaneDecision:
    """One decision tick: update accumulators, then change lanes if triggered.

    Mutates `state` (accumulation each tick, reset on an executed change).
    A candidate wins when cumulative * lcSpeedGain exceeds the threshold and
    both target gaps clear the assertiveness-reduced safety distance; with
    both sides triggered the larger accumulator wins, ties go right.
    """
    v_safe_here = anticipated_speed(idm, v, current)

    candidates: list[tuple[str, LaneContext]] = []
    if left is not None:
        candidates.append(("left", left))
    if right is not None:
        candidates.append(("right", right))

    triggered: list[tuple[float, int, LaneDecision]] = []
    for name, ctx in candidates:
        profit = lane_profit(anticipated_speed(idm, v, ctx), v_safe_here, idm.v0)
        if name == "left":
            state.cum_left = update_cumulative_profit(state.cum_left, profit)
            cum = state.cum_left
        else:
            state.cum_right = update_cumulative_profit(state.cum_right, profit)
            cum = state.cum_right
        if cum * p.lc_speed_gain > p.profit_threshold and gaps_acceptable(p, v, l_veh, ctx):
            # rank: cumulative profit, then right-preference on exact ties
            pref = 1 if name == "right" else 0
            triggered.append((cum, pref, LaneDecision.CHANGE_RIGHT if name == "right"
                              else LaneDecision.CHANGE_LEFT))

    if not triggered:
        return LaneDecision.STAY
    triggered.sort(key=lambda t: (t[0], t[1]), reverse=True)
    decision = triggered[0][2]
    if decision is LaneDecision.CHANGE_LEFT:
        state.cum_left = 0.0
    else:
        state.cum_right = 0.0
    return decision
