"""Shaped reward: r_total = r_energy + r_hand_position + r_keypress +
r_sliding.

The keypress term is a case split on what is pressed versus targeted; the
hand-position term is a bounded gaussian falloff on palm-to-target-key
distance; energy and sliding are quadratic penalties. Case (2) is computed
as case (3) minus 0.5 so the 0.5 separation between them is exact in
floating point, not merely close.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_C_ENERGY = 0.12
SLIDING_SCALE = 3.0


@dataclass(frozen=True)
class ToleranceShape:
    bound: float = 0.01
    margin: float = 0.10
    value_at_margin: float = 0.1

    def validate(self) -> None:
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if not 0.0 < self.value_at_margin < 1.0:
            raise ValueError("value_at_margin must lie in (0,1)")


@dataclass(frozen=True)
class RewardConfig:
    c_energy: float = DEFAULT_C_ENERGY
    shape: ToleranceShape = field(default_factory=ToleranceShape)
    # average the binary pressed state instead of raw mu over targeted keys
    mu_bar_binary: bool = False


@dataclass(frozen=True)
class RewardBreakdown:
    energy: float
    hand_position: float
    keypress: float
    sliding: float
    total: float


@dataclass(frozen=True)
class KeySnapshot:
    mu: np.ndarray
    pressed: np.ndarray
    targets: np.ndarray


@dataclass(frozen=True)
class HandGeometry:
    palm_position: np.ndarray           # (2,) m
    target_key_positions: tuple         # of (2,) arrays
    hand_speed: float                   # m/s, lateral


def r_energy(tau: np.ndarray, qdot: np.ndarray,
             c_energy: float = DEFAULT_C_ENERGY) -> float:
    """-(sum_i |tau_i| * |qdot_i|) * c_energy."""
    tau = np.asarray(tau, dtype=np.float64)
    qdot = np.asarray(qdot, dtype=np.float64)
    if tau.shape != qdot.shape:
        raise ValueError("tau and qdot must have the same shape")
    return float(-(np.abs(tau) @ np.abs(qdot)) * c_energy)


def tolerance(distance: float, shape: ToleranceShape = ToleranceShape()) -> float:
    """1 inside `bound`, gaussian falloff outside, hitting
    `value_at_margin` exactly at bound + margin."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    if distance <= shape.bound:
        return 1.0
    scale = math.sqrt(-2.0 * math.log(shape.value_at_margin))
    z = scale * (distance - shape.bound) / shape.margin
    return math.exp(-0.5 * z * z)


def r_hand_position(geom: HandGeometry,
                    shape: ToleranceShape = ToleranceShape()) -> float:
    """Mean tolerance over palm-to-target distances; 1.0 when no key is
    targeted (nothing to guide toward)."""
    if not geom.target_key_positions:
        return 1.0
    palm = np.asarray(geom.palm_position, dtype=np.float64)
    acc = 0.0
    for pos in geom.target_key_positions:
        d = float(np.linalg.norm(np.asarray(pos, dtype=np.float64) - palm))
        acc += tolerance(d, shape)
    return acc / len(geom.target_key_positions)


def mu_bar_target(snap: KeySnapshot, binary: bool = False) -> float:
    """Mean depression over ALL targeted keys (0 if none targeted)."""
    targets = np.asarray(snap.targets, dtype=bool)
    if not targets.any():
        return 0.0
    if binary:
        vals = np.asarray(snap.pressed, dtype=np.float64)[targets]
    else:
        vals = np.asarray(snap.mu, dtype=np.float64)[targets]
    return float(vals.mean())


def r_keypress(snap: KeySnapshot, mu_bar_binary: bool = False) -> float:
    """Four-case keypress reward.

    With keys targeted: nothing pressed scores 0; any wrong key drops the
    score to 0.5 + 0.5*mu_bar; only correct keys score 1 + 0.5*mu_bar.
    With no keys targeted: 2*(1 - max mu over wrongly pressed keys), and 2.0
    when nothing is pressed (the max over an empty set is taken as 0).
    """
    targets = np.asarray(snap.targets, dtype=bool)
    pressed = np.asarray(snap.pressed, dtype=bool)
    mu = np.asarray(snap.mu, dtype=np.float64)
    wrong = pressed & ~targets
    if targets.any():
        correct = pressed & targets
        if not wrong.any() and not correct.any():
            return 0.0
        case3 = 1.0 + 0.5 * mu_bar_target(snap, mu_bar_binary)
        if wrong.any():
            # case (2): subtracting 0.5 from a value in [1, 1.5] is exact,
            # which keeps case(3) - case(2) == 0.5 bit-for-bit
            return case3 - 0.5
        return case3
    max_wrong = float(mu[wrong].max()) if wrong.any() else 0.0
    return 2.0 * (1.0 - max_wrong)


def adjacency_lambda(pressed: np.ndarray) -> int:
    """0: nothing pressed; 2: some adjacent pair pressed; 1: otherwise."""
    pressed = np.asarray(pressed, dtype=bool)
    if not pressed.any():
        return 0
    if (pressed[:-1] & pressed[1:]).any():
        return 2
    return 1


def r_sliding(lambda_adjacency: int, hand_speed: float) -> float:
    """-lambda * speed^2 * 3."""
    if lambda_adjacency not in (0, 1, 2):
        raise ValueError("lambda_adjacency must be 0, 1 or 2")
    return -lambda_adjacency * hand_speed * hand_speed * SLIDING_SCALE


def compute(tau: np.ndarray, qdot: np.ndarray, geom: HandGeometry,
            snap: KeySnapshot,
            config: RewardConfig = RewardConfig()) -> RewardBreakdown:
    e = r_energy(tau, qdot, config.c_energy)
    h = r_hand_position(geom, config.shape)
    k = r_keypress(snap, config.mu_bar_binary)
    lam = adjacency_lambda(snap.pressed)
    s = r_sliding(lam, geom.hand_speed)
    return RewardBreakdown(energy=e, hand_position=h, keypress=k, sliding=s,
                           total=e + h + k + s)
