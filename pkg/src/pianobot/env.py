"""MDP wrapper: 20 Hz control over the plant, observation assembly, song
cursor, reward invocation and per-step TP/FP/FN counters.

Observation layout (length 356): joints(12) | slider(1) | pressed(49) |
intended(49) | future(5x49=245). The pressed/intended/future segments are
strictly binary; raw key depression never leaks into the observation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from . import metrics, reward, song as song_mod
from .errors import PianobotError
from .physics import PhysicalParams, PlantModel, nominal_params, pressed_keys

OBS_SEGMENTS = (("joints", 12), ("slider", 1), ("pressed", 49),
                ("intended", 49), ("future", 245))
OBS_OFFSETS = (0, 12, 13, 62, 111)
OBS_DIM = 356


@dataclass
class Observation:
    joints: np.ndarray      # (12,) rad
    slider: float           # m
    pressed: np.ndarray     # (49,) bool
    intended: np.ndarray    # (49,) bool
    future: np.ndarray      # (245,) bool

    def vector(self) -> np.ndarray:
        out = np.empty(OBS_DIM, dtype=np.float64)
        out[0:12] = self.joints
        out[12] = self.slider
        out[13:62] = self.pressed
        out[62:111] = self.intended
        out[111:356] = self.future
        return out


@dataclass
class StepResult:
    observation: Observation
    reward: reward.RewardBreakdown
    done: bool
    info: dict


def action_to_targets(action: np.ndarray) -> np.ndarray:
    """Affine map from normalized [-1,1] actions to joint-limit targets."""
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if a.shape != (C.JOINT_COUNT,):
        raise ValueError(f"action must have shape (13,), got {a.shape}")
    lo, hi = C.JOINT_LIMITS_LOW, C.JOINT_LIMITS_HIGH
    return lo + (a + 1.0) * 0.5 * (hi - lo)


def targets_to_action(targets: np.ndarray) -> np.ndarray:
    """Inverse of action_to_targets (useful for hold-position actions)."""
    lo, hi = C.JOINT_LIMITS_LOW, C.JOINT_LIMITS_HIGH
    return np.clip(2.0 * (targets - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def build_observation(plant_state, timeline: song_mod.SongTimeline, t: int,
                      params: PhysicalParams) -> Observation:
    """Assemble the fixed-order observation for song step t."""
    if not 0 <= t < len(timeline):
        raise IndexError(f"step {t} outside timeline of length {len(timeline)}")
    joints = plant_state.q[:12].copy()
    slider = float(plant_state.q[C.SLIDER_INDEX])
    pressed = pressed_keys(plant_state, params).copy()
    intended = timeline.targets(t).copy()
    future = song_mod.lookahead(timeline, t, C.LOOKAHEAD_STEPS)
    return Observation(joints, slider, pressed, intended, future)


def hand_geometry(plant_state, targets: np.ndarray) -> reward.HandGeometry:
    """Palm at the center of the four finger bases, projected on the key
    line; targeted keys at their center x. Speed is the slider velocity."""
    palm_x = plant_state.q[C.SLIDER_INDEX] + 1.5 * C.KEY_PITCH
    palm = np.array([palm_x, 0.0])
    key_positions = tuple(np.array([C.KEY_PITCH * k, 0.0])
                          for k in np.flatnonzero(targets))
    return reward.HandGeometry(palm, key_positions,
                               float(plant_state.qdot[C.SLIDER_INDEX]))


def suggest_start_slider(timeline: song_mod.SongTimeline) -> float:
    """Slider position putting finger 0 on the song's lowest targeted key."""
    targeted = np.flatnonzero(timeline.steps.any(axis=0))
    if len(targeted) == 0:
        return 0.0
    x = C.KEY_PITCH * float(targeted.min())
    lo = float(C.JOINT_LIMITS_LOW[C.SLIDER_INDEX])
    hi = float(C.JOINT_LIMITS_HIGH[C.SLIDER_INDEX])
    return float(np.clip(x, lo, hi))


class PianoEnv:
    """One song episode at a time; single-owner like the plant it wraps.

    obs_noise_std and action_latency_steps are experimental perturbations,
    both off by default: noise is gaussian on the continuous joint/slider
    segments only, latency delays actions through a FIFO of held targets.
    """

    def __init__(self, timeline: song_mod.SongTimeline,
                 params: PhysicalParams = None,
                 reward_config: reward.RewardConfig = None,
                 use_numba=None,
                 obs_noise_std: float = 0.0,
                 action_latency_steps: int = 0):
        self.timeline = timeline
        self.reward_config = reward_config or reward.RewardConfig()
        self.obs_noise_std = float(obs_noise_std)
        self.action_latency_steps = int(action_latency_steps)
        self.plant = PlantModel(params or nominal_params(), use_numba=use_numba)
        self.cursor = 0
        self.done = True
        self._noise_rng = np.random.default_rng(0)
        self._pending_actions = []

    @property
    def params(self) -> PhysicalParams:
        return self.plant.params

    def reset(self, params: PhysicalParams = None, seed: int = 0) -> Observation:
        if params is not None:
            self.plant.set_params(params)
        self.plant.reset()
        self.cursor = 0
        self.done = len(self.timeline) == 0
        self._noise_rng = np.random.default_rng(seed)
        self._pending_actions = []
        return self._observe(0)

    def _observe(self, t: int) -> Observation:
        obs = build_observation(self.plant.state, self.timeline, t,
                                self.plant.params)
        if self.obs_noise_std > 0.0:
            obs.joints = obs.joints + self._noise_rng.normal(
                0.0, self.obs_noise_std, size=12)
            obs.slider = float(obs.slider + self._noise_rng.normal(
                0.0, self.obs_noise_std))
        return obs

    def step(self, action: np.ndarray) -> StepResult:
        if self.done:
            raise PianobotError("step() called on a finished episode")
        targets_cmd = action_to_targets(action)
        if self.action_latency_steps > 0:
            self._pending_actions.append(targets_cmd)
            if len(self._pending_actions) > self.action_latency_steps:
                targets_cmd = self._pending_actions.pop(0)
            else:
                targets_cmd = action_to_targets(
                    targets_to_action(self.plant.state.q))
        t = self.cursor
        torques = self.plant.advance(targets_cmd)
        state = self.plant.state
        key_targets = self.timeline.targets(t)
        pressed = pressed_keys(state, self.plant.params)
        snap = reward.KeySnapshot(mu=state.mu.copy(), pressed=pressed,
                                  targets=key_targets)
        geom = hand_geometry(state, key_targets)
        breakdown = reward.compute(torques.tau, state.qdot, geom, snap,
                                   self.reward_config)
        counts = metrics.step_counts(pressed, key_targets)
        self.cursor = t + 1
        self.done = self.cursor >= len(self.timeline)
        obs_t = min(self.cursor, len(self.timeline) - 1)
        obs = self._observe(obs_t)
        info = {"t": t, "counts": counts, "pressed": pressed,
                "targets": key_targets,
                "params_hash": self.plant.params.hash_hex()}
        return StepResult(obs, breakdown, self.done, info)


def step_record(t: int, action: np.ndarray, pressed: np.ndarray,
                targets: np.ndarray, breakdown: reward.RewardBreakdown) -> dict:
    """One JSON-ready episode-log record."""
    return {
        "t": int(t),
        "action": [float(a) for a in np.asarray(action).ravel()],
        "pressed": [int(k) for k in np.flatnonzero(pressed)],
        "targets": [int(k) for k in np.flatnonzero(targets)],
        "reward": {
            "energy": breakdown.energy,
            "hand_position": breakdown.hand_position,
            "keypress": breakdown.keypress,
            "sliding": breakdown.sliding,
            "total": breakdown.total,
        },
    }


def records_to_jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(records_to_jsonl(records))
