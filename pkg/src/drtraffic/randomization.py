"""Per-vehicle driver-parameter randomization.

Seven parameters (five car-following, two lane-changing) are drawn from
truncated Gaussians over closed intervals, mean at the interval midpoint and
sigma a sixth of the width, so ~99.73% of raw draws land inside; the rest are
clipped to the bounds. Disabled parameters keep their defaults, which is what
the ablation grid toggles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .idm import IdmParams
from .sl2015 import Sl2015Params


class UnknownParameter(KeyError):
    pass


class Provenance(enum.Enum):
    DEFAULT = "default"
    RANDOMIZED = "randomized"


# Canonical order fixes the draw sequence; changing it changes every seeded run.
PARAM_ORDER = ("delta", "T", "a_max", "a_min", "v_max", "lcSpeedGain", "lcAssertive")

DEFAULTS = {
    "delta": 4.0,
    "T": 1.0,
    "a_max": 2.6,
    "a_min": -4.5,
    "v_max": 8.33,
    "lcSpeedGain": 1.0,
    "lcAssertive": 1.0,
}

INTERVALS = {
    "delta": (3.5, 4.5),
    "T": (0.5, 1.5),
    "a_max": (1.8, 3.4),
    "a_min": (-5.5, -3.5),
    "v_max": (7.33, 9.33),
    "lcSpeedGain": (0.0, 100.0),
    "lcAssertive": (1.0, 5.0),
}


@dataclass(frozen=True)
class ParamRange:
    enabled: bool
    s_min: float
    s_max: float

    @property
    def mu(self) -> float:
        return 0.5 * (self.s_max + self.s_min)

    @property
    def sigma(self) -> float:
        return (self.s_max - self.s_min) / 6.0

    def validate(self, name: str) -> "ParamRange":
        if not self.s_min < self.s_max:
            raise ValueError(f"{name}: s_min must be < s_max, got [{self.s_min}, {self.s_max}]")
        return self


@dataclass(frozen=True)
class RandomizationSpec:
    ranges: dict[str, ParamRange] = field(default_factory=dict)

    @staticmethod
    def all_enabled() -> "RandomizationSpec":
        return RandomizationSpec({
            name: ParamRange(True, *INTERVALS[name]) for name in PARAM_ORDER
        })

    @staticmethod
    def none_enabled() -> "RandomizationSpec":
        return RandomizationSpec({
            name: ParamRange(False, *INTERVALS[name]) for name in PARAM_ORDER
        })

    def validate(self) -> "RandomizationSpec":
        for name in PARAM_ORDER:
            if name not in self.ranges:
                raise ValueError(f"missing parameter range for {name}")
            self.ranges[name].validate(name)
        return self

    def any_enabled(self) -> bool:
        return any(r.enabled for r in self.ranges.values())


def ablation_spec(base: RandomizationSpec, drop: str) -> RandomizationSpec:
    """Copy of `base` with exactly one parameter's randomization disabled."""
    if drop not in PARAM_ORDER:
        raise UnknownParameter(drop)
    ranges = dict(base.ranges)
    r = ranges[drop]
    ranges[drop] = ParamRange(False, r.s_min, r.s_max)
    return RandomizationSpec(ranges)


@dataclass
class DriverParams:
    idm: IdmParams
    lc: Sl2015Params
    provenance: Provenance = Provenance.DEFAULT


def default_driver_params() -> DriverParams:
    return DriverParams(
        idm=IdmParams(a_max=DEFAULTS["a_max"], a_min=DEFAULTS["a_min"],
                      v0=DEFAULTS["v_max"], delta=DEFAULTS["delta"], T=DEFAULTS["T"]),
        lc=Sl2015Params(lc_speed_gain=DEFAULTS["lcSpeedGain"],
                        lc_assertive=DEFAULTS["lcAssertive"]),
        provenance=Provenance.DEFAULT,
    )


def _values_to_params(values: dict[str, float], randomized: bool) -> DriverParams:
    return DriverParams(
        idm=IdmParams(a_max=values["a_max"], a_min=values["a_min"],
                      v0=values["v_max"], delta=values["delta"], T=values["T"]),
        lc=Sl2015Params(lc_speed_gain=values["lcSpeedGain"],
                        lc_assertive=values["lcAssertive"]),
        provenance=Provenance.RANDOMIZED if randomized else Provenance.DEFAULT,
    )


def sample_params(spec: RandomizationSpec, rng: np.random.Generator) -> DriverParams:
    """Draw one vehicle's parameters.

    Always consumes exactly 7 normals (one per parameter, canonical order),
    including for disabled parameters, so the stream stays aligned across
    ablation variants.
    """
    z = rng.standard_normal(len(PARAM_ORDER))
    values = {}
    for i, name in enumerate(PARAM_ORDER):
        r = spec.ranges[name]
        if r.enabled:
            values[name] = float(np.clip(r.mu + r.sigma * z[i], r.s_min, r.s_max))
        else:
            values[name] = DEFAULTS[name]
    return _values_to_params(values, spec.any_enabled())


def sample_params_batch(spec: RandomizationSpec, rng: np.random.Generator,
                        n: int) -> dict[str, np.ndarray]:
    """Vectorized equivalent of n sample_params calls (same draw sequence).

    Returns raw and clipped columns per parameter; used by the CLI CSV dump
    and the distribution-statistics tests.
    """
    z = rng.standard_normal((n, len(PARAM_ORDER)))
    out: dict[str, np.ndarray] = {}
    for i, name in enumerate(PARAM_ORDER):
        r = spec.ranges[name]
        if r.enabled:
            raw = r.mu + r.sigma * z[:, i]
            out[name + "_raw"] = raw
            out[name] = np.clip(raw, r.s_min, r.s_max)
        else:
            col = np.full(n, DEFAULTS[name])
            out[name + "_raw"] = col
            out[name] = col.copy()
    return out
