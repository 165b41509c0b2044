"""Deterministic fixed-timestep plant: planar 4-finger hand over a 49-key
spring-hinge keyboard.

Joint layout (13 DOFs): for finger f in 0..3, q[3f] is sideways abduction,
q[3f+1] the proximal flexion, q[3f+2] the distal flexion; q[12] is the
lateral slider carrying the whole hand. Fingertip kinematics are closed-form
(two-link chain in the x-z plane), keys are independent first-order springs
driven by fingertip penetration, friction on the lateral DOFs is a stick/slip
impulse model. Integration is semi-implicit Euler at DT_PHYSICS.
"""

from __future__ import annotations

import csv
import hashlib
import importlib.resources
import math
from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from .errors import ConfigError, IntegrationFault
from .kernels import NUMBA_DEFAULT, get_kernel

PARAMS_FILE_VERSION = 1

# keys of the nominal-parameter text file, in file order
_SCALAR_KEYS = (
    "piano_height",
    "joint_damping_finger",
    "joint_damping_slider",
    "joint_stiffness_finger",
    "joint_stiffness_slider",
    "key_spring_stiffness",
    "key_press_threshold",
    "finger_key_friction",
    "hand_start_slider",
)


@dataclass
class PhysicalParams:
    """Everything the domain randomizer may touch.

    joint_damping and joint_stiffness are per-DOF arrays (index 12 is the
    slider, units N·s/m and N/m there; N·m·s/rad and N·m/rad elsewhere).
    """

    piano_height: float
    joint_damping: np.ndarray
    joint_stiffness: np.ndarray
    key_spring_stiffness: float
    key_press_threshold: float
    finger_key_friction: float
    hand_start_slider: float

    def __post_init__(self):
        self.joint_damping = np.asarray(self.joint_damping, dtype=np.float64)
        self.joint_stiffness = np.asarray(self.joint_stiffness, dtype=np.float64)

    def validate(self) -> None:
        """Raise ConfigError unless every field is physically sensible."""
        if self.joint_damping.shape != (C.JOINT_COUNT,):
            raise ConfigError("joint_damping must have shape (13,)")
        if self.joint_stiffness.shape != (C.JOINT_COUNT,):
            raise ConfigError("joint_stiffness must have shape (13,)")
        strictly_positive = [
            ("piano_height", self.piano_height),
            ("key_spring_stiffness", self.key_spring_stiffness),
        ]
        for name, value in strictly_positive:
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")
        for name, arr in (("joint_damping", self.joint_damping),
                          ("joint_stiffness", self.joint_stiffness)):
            if not (np.isfinite(arr).all() and (arr > 0.0).all()):
                raise ConfigError(f"{name} must be strictly positive everywhere")
        if not (0.0 < self.key_press_threshold < 1.0):
            raise ConfigError(
                f"key_press_threshold must lie in (0,1), got {self.key_press_threshold!r}")
        if not (math.isfinite(self.finger_key_friction)
                and self.finger_key_friction >= 0.0):
            raise ConfigError("finger_key_friction must be >= 0")
        lo = C.JOINT_LIMITS_LOW[C.SLIDER_INDEX]
        hi = C.JOINT_LIMITS_HIGH[C.SLIDER_INDEX]
        if not (lo <= self.hand_start_slider <= hi):
            raise ConfigError(
                f"hand_start_slider {self.hand_start_slider!r} outside slider range"
                f" [{lo}, {hi}]")

    def copy(self) -> "PhysicalParams":
        return PhysicalParams(
            piano_height=self.piano_height,
            joint_damping=self.joint_damping.copy(),
            joint_stiffness=self.joint_stiffness.copy(),
            key_spring_stiffness=self.key_spring_stiffness,
            key_press_threshold=self.key_press_threshold,
            finger_key_friction=self.finger_key_friction,
            hand_start_slider=self.hand_start_slider,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhysicalParams):
            return NotImplemented
        return (self.piano_height == other.piano_height
                and np.array_equal(self.joint_damping, other.joint_damping)
                and np.array_equal(self.joint_stiffness, other.joint_stiffness)
                and self.key_spring_stiffness == other.key_spring_stiffness
                and self.key_press_threshold == other.key_press_threshold
                and self.finger_key_friction == other.finger_key_friction
                and self.hand_start_slider == other.hand_start_slider)

    def pack(self) -> np.ndarray:
        """Flatten to a float64 vector (stable order, used for hashing)."""
        return np.concatenate([
            [self.piano_height],
            self.joint_damping,
            self.joint_stiffness,
            [self.key_spring_stiffness, self.key_press_threshold,
             self.finger_key_friction, self.hand_start_slider],
        ]).astype(np.float64)

    def hash_hex(self) -> str:
        return hashlib.sha256(self.pack().tobytes()).hexdigest()[:16]


def _parse_params_text(text: str, origin: str) -> PhysicalParams:
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}: bad line {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    version = int(values.pop("version", "-1"))
    if version != PARAMS_FILE_VERSION:
        raise ConfigError(
            f"{origin}: params file version {version}, expected {PARAMS_FILE_VERSION}")
    missing = [k for k in _SCALAR_KEYS if k not in values]
    if missing:
        raise ConfigError(f"{origin}: missing keys {missing}")
    extra = [k for k in values if k not in _SCALAR_KEYS]
    if extra:
        raise ConfigError(f"{origin}: unknown keys {extra}")
    try:
        f = {k: float(values[k]) for k in _SCALAR_KEYS}
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    damping = np.full(C.JOINT_COUNT, f["joint_damping_finger"])
    damping[C.SLIDER_INDEX] = f["joint_damping_slider"]
    stiffness = np.full(C.JOINT_COUNT, f["joint_stiffness_finger"])
    stiffness[C.SLIDER_INDEX] = f["joint_stiffness_slider"]
    params = PhysicalParams(
        piano_height=f["piano_height"],
        joint_damping=damping,
        joint_stiffness=stiffness,
        key_spring_stiffness=f["key_spring_stiffness"],
        key_press_threshold=f["key_press_threshold"],
        finger_key_friction=f["finger_key_friction"],
        hand_start_slider=f["hand_start_slider"],
    )
    params.validate()
    return params


def load_params(path) -> PhysicalParams:
    """Read a versioned key=value constants file."""
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_params_text(fh.read(), str(path))


def nominal_params() -> PhysicalParams:
    """The packaged nominal plant parameters."""
    text = (importlib.resources.files("pianobot")
            .joinpath("data", "nominal_params.txt").read_text(encoding="utf-8"))
    return _parse_params_text(text, "nominal_params.txt")


@dataclass
class PlantState:
    q: np.ndarray
    qdot: np.ndarray
    mu: np.ndarray
    mu_dot: np.ndarray
    sim_time: float = 0.0

    def copy(self) -> "PlantState":
        return PlantState(self.q.copy(), self.qdot.copy(),
                          self.mu.copy(), self.mu_dot.copy(), self.sim_time)


@dataclass
class JointTorques:
    tau: np.ndarray


@dataclass
class FingertipPose:
    x: float
    z: float


def reference_state(params: PhysicalParams) -> PlantState:
    """All joints at zero, slider at the configured start, keys at rest."""
    q = np.zeros(C.JOINT_COUNT)
    q[C.SLIDER_INDEX] = params.hand_start_slider
    return PlantState(
        q=q,
        qdot=np.zeros(C.JOINT_COUNT),
        mu=np.zeros(C.KEY_COUNT),
        mu_dot=np.zeros(C.KEY_COUNT),
        sim_time=0.0,
    )


def fingertip_x(q: np.ndarray, f: int) -> float:
    return C.KEY_PITCH * f + q[C.SLIDER_INDEX] + C.ABDUCTION_REACH * math.sin(q[3 * f])


def fingertip_z(q: np.ndarray, f: int) -> float:
    prox = q[3 * f + 1]
    return (C.REST_CLEARANCE - C.LINK1 * math.sin(prox)
            - C.LINK2 * math.sin(prox + q[3 * f + 2]))


def forward_kinematics(q: np.ndarray) -> list:
    """Closed-form fingertip poses. z is measured from the white-key top at
    the nominal board height; negative means below the surface."""
    return [FingertipPose(fingertip_x(q, f), fingertip_z(q, f))
            for f in range(C.FINGER_COUNT)]


def clamp_targets(action: np.ndarray) -> np.ndarray:
    return np.clip(action, C.JOINT_LIMITS_LOW, C.JOINT_LIMITS_HIGH)


class PlantModel:
    """Single-owner mutable plant. Holds derived integrator constants so the
    kernel call is allocation-free apart from two small scratch arrays.

    key_tops / key_halfwidths default to the standard raised-black-key
    profile but are plain arrays so tests (and perturbed plants) can swap
    the geometry.
    """

    def __init__(self, params: PhysicalParams, key_tops=None, key_halfwidths=None,
                 use_numba=None):
        params.validate()
        self.params = params
        self.key_tops = (C.default_key_tops() if key_tops is None
                         else np.asarray(key_tops, dtype=np.float64).copy())
        self.key_halfwidths = (C.default_key_halfwidths() if key_halfwidths is None
                               else np.asarray(key_halfwidths, dtype=np.float64).copy())
        if self.key_tops.shape != (C.KEY_COUNT,) or \
                self.key_halfwidths.shape != (C.KEY_COUNT,):
            raise ConfigError("key geometry arrays must have shape (49,)")
        self._kernel = get_kernel(NUMBA_DEFAULT if use_numba is None else use_numba)
        self._derive()
        self.state = reference_state(params)
        self._tau = np.zeros(C.JOINT_COUNT)

    def _derive(self) -> None:
        p = self.params
        dt = C.DT_PHYSICS
        kc = C.CONTACT_STIFFNESS
        ks = p.key_spring_stiffness
        cd = C.KEY_DAMPING
        self._press_ratio = kc / (kc + ks)
        self._contact_decay = math.exp(-dt * (kc + ks) / cd)
        self._free_decay = math.exp(-dt * ks / cd)
        self._inv_inertia = 1.0 / C.JOINT_INERTIA
        # velocity change a 1 N normal force can cancel in one substep
        self._fric_dv_slider = p.finger_key_friction * dt / C.SLIDER_MASS
        self._fric_dv_side = (p.finger_key_friction * C.ABDUCTION_REACH * dt
                              / C.FINGER_JOINT_INERTIA)
        self._piano_dz = p.piano_height - C.PIANO_HEIGHT_NOMINAL

    def set_params(self, params: PhysicalParams) -> None:
        params.validate()
        self.params = params
        self._derive()

    def reset(self) -> PlantState:
        self.state = reference_state(self.params)
        return self.state

    def advance(self, targets: np.ndarray,
                substeps: int = C.SUBSTEPS_PER_CONTROL) -> JointTorques:
        """Run `substeps` physics substeps holding `targets` fixed.

        Mutates self.state in place. Raises IntegrationFault if the state
        stops being finite.
        """
        target = clamp_targets(np.asarray(targets, dtype=np.float64))
        s = self.state
        fault = self._kernel(
            s.q, s.qdot, s.mu, s.mu_dot, self._tau,
            target, self.params.joint_stiffness, self.params.joint_damping,
            self._inv_inertia, C.JOINT_LIMITS_LOW, C.JOINT_LIMITS_HIGH,
            self.key_tops, self.key_halfwidths,
            substeps, C.DT_PHYSICS, C.KEY_PITCH, C.ABDUCTION_REACH,
            C.LINK1, C.LINK2, C.REST_CLEARANCE, C.KEY_TRAVEL, self._piano_dz,
            C.CONTACT_STIFFNESS, self._press_ratio, self._contact_decay,
            self._free_decay, self._fric_dv_slider, self._fric_dv_side,
            C.MAX_KEY_DRIVE)
        s.sim_time += substeps * C.DT_PHYSICS
        if fault:
            raise IntegrationFault(
                f"non-finite plant state at sim_time={s.sim_time:.3f}s")
        return JointTorques(self._tau.copy())

    def pressed(self) -> np.ndarray:
        return pressed_keys(self.state, self.params)


def step(state: PlantState, action: np.ndarray,
         params: PhysicalParams) -> tuple:
    """Functional single control step (10 substeps): returns (new_state,
    torques) and leaves `state` untouched."""
    model = PlantModel(params)
    model.state = state.copy()
    torques = model.advance(action)
    return model.state, torques


def pressed_keys(state: PlantState, params: PhysicalParams) -> np.ndarray:
    """Boolean mask: key k counts as pressed iff mu[k] >= threshold."""
    return state.mu >= params.key_press_threshold


def dump_trajectory(states, path) -> None:
    """Write per-step q, qdot, mu rows as CSV."""
    header = (["sim_time"]
              + [f"q{j}" for j in range(C.JOINT_COUNT)]
              + [f"qdot{j}" for j in range(C.JOINT_COUNT)]
              + [f"mu{k}" for k in range(C.KEY_COUNT)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in states:
            row = ([f"{s.sim_time:.6f}"]
                   + [repr(float(v)) for v in s.q]
                   + [repr(float(v)) for v in s.qdot]
                   + [repr(float(v)) for v in s.mu])
            writer.writerow(row)
