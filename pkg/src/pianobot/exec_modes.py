"""The three deployment modes over a shadow simulation and a plant.

JointMirroring: the policy lives entirely in the shadow sim; the plant
replays the shadow's joint targets open loop. Hybrid: plant pressed keys
replace the shadow's in the observation, joints stay simulated. RealWorld:
every plant-derived segment of the observation comes from the plant and the
shadow sits idle.

The default plant is a second internal simulator with a fixed, direction-
stable parameter perturbation (the transfer-gap proxy); a BridgePlant speaks
the line-delimited JSON protocol instead so real hardware drops in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from . import env as env_mod
from . import metrics, reward
from . import song as song_mod
from .bridge import BridgeClient
from .errors import BridgeProtocolError, BridgeTimeoutError, IntegrationFault
from .physics import PhysicalParams, PlantModel, pressed_keys

MIRROR = "mirror"
HYBRID = "hybrid"
REAL = "real"
MODES = (MIRROR, HYBRID, REAL)

_ALIASES = {"jointmirroring": MIRROR, "joint_mirroring": MIRROR,
            "mirroring": MIRROR, "realworld": REAL, "real_world": REAL,
            "real-world": REAL}


def canonical_mode(name: str) -> str:
    low = name.strip().lower()
    low = _ALIASES.get(low, low)
    if low not in MODES:
        raise ValueError(f"unknown mode {name!r}; use one of {MODES}")
    return low


@dataclass
class FusedObservation:
    """Observation plus where each segment came from."""
    obs: env_mod.Observation
    provenance: dict    # segment name -> "sim" | "plant" | "song"

    def vector(self) -> np.ndarray:
        return self.obs.vector()


def expected_provenance(mode: str) -> dict:
    src = {"joints": "sim", "slider": "sim", "pressed": "sim"}
    if mode == HYBRID:
        src["pressed"] = "plant"
    elif mode == REAL:
        src = {"joints": "plant", "slider": "plant", "pressed": "plant"}
    src["intended"] = "song"
    src["future"] = "song"
    return src


# ---------------------------------------------------------------------------
# plant handles
# ---------------------------------------------------------------------------

class SimPlant:
    """Internal simulator as the plant; full state access."""

    def __init__(self, params: PhysicalParams, use_numba=None):
        self.model = PlantModel(params, use_numba=use_numba)

    def reset(self):
        self.model.reset()

    def step(self, t: int, cmd: np.ndarray):
        """Returns (pressed bool[49], joints[13], fresh=True)."""
        self.model.advance(cmd)
        return (self.model.pressed().copy(), self.model.state.q.copy(), True)

    def close(self):
        pass


class BridgePlant:
    """External plant behind a BridgeClient."""

    def __init__(self, client: BridgeClient):
        self.client = client

    def reset(self):
        pass  # the device owns its reset; the protocol starts at t=0

    def step(self, t: int, cmd: np.ndarray):
        reply = self.client.step(t, cmd)
        return reply.keys, reply.joints, reply.fresh

    def close(self):
        self.client.close()


def proxy_params(nominal: PhysicalParams, gap: float = 1.0) -> PhysicalParams:
    """Deterministic plant-mismatch proxy: every parameter pushed in a fixed
    direction, magnitude scaled by `gap` (0 = identical plant)."""
    p = nominal.copy()
    p.joint_damping = p.joint_damping * (1.0 + 0.30 * gap)
    p.joint_stiffness = p.joint_stiffness * (1.0 - 0.20 * gap)
    p.key_spring_stiffness *= 1.0 + 0.20 * gap
    p.finger_key_friction *= 1.0 + 0.40 * gap
    p.key_press_threshold = min(0.95, p.key_press_threshold + 0.08 * gap)
    p.piano_height += 0.004 * gap
    p.validate()
    return p


@dataclass
class ModeConfig:
    mode: str
    shadow_params: PhysicalParams
    plant: object                      # SimPlant or BridgePlant
    # forward the shadow's measured joint positions instead of the raw
    # action targets (alternative reading of the mirroring description)
    forward_positions: bool = False
    reward_config: reward.RewardConfig = field(
        default_factory=reward.RewardConfig)
    averaging: str = metrics.MICRO


@dataclass
class ModeEpisodeResult:
    scores_sim: metrics.Scores
    scores_plant: metrics.Scores
    records: list                      # JSON-ready per-step dicts
    divergence_steps: int              # steps where shadow keys != plant keys
    stale_steps: int                   # plant replies past deadline
    aborted: bool = False
    abort_reason: str = ""


def run_episode(policy, timeline: song_mod.SongTimeline,
                cfg: ModeConfig) -> ModeEpisodeResult:
    """One full song under the configured mode.

    `policy` is anything with act(obs_vector, deterministic=True). The plant
    always receives the per-step joint command; only the observation
    sourcing changes with the mode. On a bridge abort the partial log is
    returned with aborted=True.
    """
    mode = canonical_mode(cfg.mode)
    shadow = PlantModel(cfg.shadow_params)
    cfg.plant.reset()
    provenance = expected_provenance(mode)

    sim_counts, plant_counts = [], []
    records = []
    divergence = 0
    stale = 0
    aborted = False
    abort_reason = ""

    pressed_plant = np.zeros(C.KEY_COUNT, dtype=bool)
    plant_joints = shadow.state.q.copy()

    def fused(t: int) -> FusedObservation:
        sim_obs = env_mod.build_observation(shadow.state, timeline, t,
                                            cfg.shadow_params)
        if mode == MIRROR:
            obs = sim_obs
        elif mode == HYBRID:
            obs = env_mod.Observation(sim_obs.joints, sim_obs.slider,
                                      pressed_plant.copy(),
                                      sim_obs.intended, sim_obs.future)
        else:
            if plant_joints is None:
                raise BridgeProtocolError(
                    "real mode needs joint telemetry from the plant")
            obs = env_mod.Observation(plant_joints[:12].copy(),
                                      float(plant_joints[C.SLIDER_INDEX]),
                                      pressed_plant.copy(),
                                      sim_obs.intended, sim_obs.future)
        return FusedObservation(obs, dict(provenance))

    obs = fused(0)
    n = len(timeline)
    for t in range(n):
        action = policy.act(obs.vector(), deterministic=True)
        targets_cmd = env_mod.action_to_targets(action)
        key_targets = timeline.targets(t)

        shadow_active = mode in (MIRROR, HYBRID)
        torques = None
        if shadow_active:
            torques = shadow.advance(targets_cmd)
            cmd = shadow.state.q.copy() if cfg.forward_positions else targets_cmd
        else:
            cmd = targets_cmd

        try:
            pressed_plant, joints, fresh = cfg.plant.step(t, cmd)
        except (BridgeTimeoutError, BridgeProtocolError, IntegrationFault) as exc:
            aborted = True
            abort_reason = f"{type(exc).__name__}: {exc}"
            records.append({"t": t, "aborted": abort_reason})
            break
        if joints is not None:
            plant_joints = joints
        elif mode == REAL:
            plant_joints = None
        if not fresh:
            stale += 1

        pressed_sim = pressed_keys(shadow.state, cfg.shadow_params)
        sim_counts.append(metrics.step_counts(pressed_sim, key_targets))
        plant_counts.append(metrics.step_counts(pressed_plant, key_targets))
        if shadow_active and not np.array_equal(pressed_sim, pressed_plant):
            divergence += 1

        if shadow_active:
            snap = reward.KeySnapshot(shadow.state.mu.copy(),
                                      pressed_sim, key_targets)
            geom = env_mod.hand_geometry(shadow.state, key_targets)
            breakdown = reward.compute(torques.tau, shadow.state.qdot,
                                       geom, snap, cfg.reward_config)
        else:
            # over a bridge only binary key states exist; the keypress term
            # is logged with the pressed mask standing in for raw depression
            # and the torque/position terms are zeroed
            snap = reward.KeySnapshot(pressed_plant.astype(np.float64),
                                      pressed_plant, key_targets)
            kp = reward.r_keypress(snap, cfg.reward_config.mu_bar_binary)
            breakdown = reward.RewardBreakdown(
                energy=0.0, hand_position=0.0, keypress=kp, sliding=0.0,
                total=kp)

        rec = env_mod.step_record(t, action, pressed_plant, key_targets,
                                  breakdown)
        rec["sim_pressed"] = [int(k) for k in np.flatnonzero(pressed_sim)]
        rec["provenance"] = dict(provenance)
        rec["fresh"] = bool(fresh)
        records.append(rec)

        if t + 1 < n:
            obs = fused(t + 1)

    return ModeEpisodeResult(
        scores_sim=metrics.score_episode(sim_counts, cfg.averaging),
        scores_plant=metrics.score_episode(plant_counts, cfg.averaging),
        records=records,
        divergence_steps=divergence,
        stale_steps=stale,
        aborted=aborted,
        abort_reason=abort_reason,
    )
