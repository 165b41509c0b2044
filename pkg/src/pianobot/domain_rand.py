"""Per-episode domain randomization over the plant parameters, scaled by a
single intensity knob c_dr in [0, 1].

Multiplicative parameters draw a factor from [1 - f*c_dr, 1 + f*c_dr];
piano_height, hand_start_slider and key_press_threshold draw an additive
offset from [-r*c_dr, +r*c_dr]. Sampling is counter-based: the stream for
episode i is seeded with (seed, i), so workers can sample any episode
independently and identically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import constants as C
from .errors import ConfigError
from .physics import PhysicalParams


@dataclass(frozen=True)
class DRSpreads:
    """Half-width of each parameter's range at c_dr = 1. Fractions of
    nominal for multiplicative fields, absolute units for additive ones."""
    joint_damping: float = 0.50
    joint_stiffness: float = 0.30
    key_spring_stiffness: float = 0.30
    finger_key_friction: float = 0.50
    key_press_threshold: float = 0.15   # absolute
    piano_height: float = 0.01          # absolute, m
    hand_start_slider: float = 0.05     # absolute, m

    def validate(self) -> None:
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ConfigError(f"spread {name} must be >= 0")


# draw order of the per-episode stream; changing this changes every sample
_MULTIPLICATIVE = ("joint_damping", "joint_stiffness", "key_spring_stiffness",
                   "finger_key_friction")
_ADDITIVE = ("key_press_threshold", "piano_height", "hand_start_slider")

_THRESHOLD_CLAMP = (1e-3, 1.0 - 1e-3)


@dataclass(frozen=True)
class DRConfig:
    nominal: PhysicalParams
    c_dr: float = 0.0
    spreads: DRSpreads = field(default_factory=DRSpreads)
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.c_dr <= 1.0:
            raise ConfigError(f"c_dr must lie in [0,1], got {self.c_dr!r}")
        self.spreads.validate()
        self.nominal.validate()

    def hash_hex(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.c_dr).tobytes())
        for name in _MULTIPLICATIVE + _ADDITIVE:
            h.update(np.float64(getattr(self.spreads, name)).tobytes())
        h.update(np.int64(self.seed).tobytes())
        h.update(self.nominal.pack().tobytes())
        return h.hexdigest()[:16]


def param_bounds(config: DRConfig) -> dict:
    """Analytic support of every sampled scalar (before clamping).
    Array-valued fields report the bound on their shared factor's nominal."""
    n = config.nominal
    c = config.c_dr
    s = config.spreads
    out = {}
    nominal_scalar = {
        "joint_damping": 1.0,  # factor applied to the whole array
        "joint_stiffness": 1.0,
        "key_spring_stiffness": n.key_spring_stiffness,
        "finger_key_friction": n.finger_key_friction,
    }
    for name in _MULTIPLICATIVE:
        f = getattr(s, name) * c
        base = nominal_scalar[name]
        out[name] = (base * (1.0 - f), base * (1.0 + f))
    additive_nominal = {
        "key_press_threshold": n.key_press_threshold,
        "piano_height": n.piano_height,
        "hand_start_slider": n.hand_start_slider,
    }
    for name in _ADDITIVE:
        r = getattr(s, name) * c
        base = additive_nominal[name]
        out[name] = (base - r, base + r)
    return out


class DRSampler:
    """Stateless per-episode sampler that counts validity clamps."""

    def __init__(self, config: DRConfig):
        config.validate()
        self.config = config
        self.clamp_counts = {name: 0 for name in _MULTIPLICATIVE + _ADDITIVE}

    @property
    def total_clamps(self) -> int:
        return sum(self.clamp_counts.values())

    def _clamp(self, name: str, value: float, lo: float, hi: float) -> float:
        if value < lo:
            self.clamp_counts[name] += 1
            return lo
        if value > hi:
            self.clamp_counts[name] += 1
            return hi
        return value

    def sample(self, episode_index: int) -> PhysicalParams:
        cfg = self.config
        n = cfg.nominal
        c = cfg.c_dr
        s = cfg.spreads
        rng = np.random.default_rng([cfg.seed, int(episode_index)])
        factors = {}
        for name in _MULTIPLICATIVE:
            f = getattr(s, name) * c
            factors[name] = rng.uniform(1.0 - f, 1.0 + f)
        offsets = {}
        for name in _ADDITIVE:
            r = getattr(s, name) * c
            offsets[name] = rng.uniform(-r, r)
        slider_lo = float(C.JOINT_LIMITS_LOW[C.SLIDER_INDEX])
        slider_hi = float(C.JOINT_LIMITS_HIGH[C.SLIDER_INDEX])
        tiny = 1e-9
        params = PhysicalParams(
            piano_height=self._clamp(
                "piano_height", n.piano_height + offsets["piano_height"],
                tiny, np.inf),
            joint_damping=n.joint_damping * self._clamp(
                "joint_damping", factors["joint_damping"], tiny, np.inf),
            joint_stiffness=n.joint_stiffness * self._clamp(
                "joint_stiffness", factors["joint_stiffness"], tiny, np.inf),
            key_spring_stiffness=self._clamp(
                "key_spring_stiffness",
                n.key_spring_stiffness * factors["key_spring_stiffness"],
                tiny, np.inf),
            key_press_threshold=self._clamp(
                "key_press_threshold",
                n.key_press_threshold + offsets["key_press_threshold"],
                _THRESHOLD_CLAMP[0], _THRESHOLD_CLAMP[1]),
            finger_key_friction=self._clamp(
                "finger_key_friction",
                n.finger_key_friction * factors["finger_key_friction"],
                0.0, np.inf),
            hand_start_slider=self._clamp(
                "hand_start_slider",
                n.hand_start_slider + offsets["hand_start_slider"],
                slider_lo, slider_hi),
        )
        params.validate()
        return params


def sample_params(config: DRConfig, episode_index: int) -> PhysicalParams:
    return DRSampler(config).sample(episode_index)
