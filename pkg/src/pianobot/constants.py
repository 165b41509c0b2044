"""Fixed geometry and integration constants of the simplified plant.

Everything here is structural: board layout, finger linkage, masses, and
integrator settings. Per-episode physical parameters (spring stiffness,
damping, friction, ...) live in :class:`pianobot.physics.PhysicalParams`
and are loaded from the versioned ``data/nominal_params.txt`` file.
"""

import numpy as np

KEY_COUNT = 49
FINGER_COUNT = 4
JOINT_COUNT = 13  # 4 fingers x (side, proximal, distal) + slider
SLIDER_INDEX = 12

# MIDI note window covered by the 4-octave board (C2..C6).
MIDI_LOW = 36
MIDI_HIGH = 84

DT_PHYSICS = 0.005  # s, one integrator step
SUBSTEPS_PER_CONTROL = 10  # policy acts every 10th physics step
DT_CONTROL = DT_PHYSICS * SUBSTEPS_PER_CONTROL  # 0.05 s -> 20 Hz

LOOKAHEAD_STEPS = 5

# Board geometry. Keys are laid out chromatically at uniform pitch; black
# keys are narrower and their top surface sits above the white-key plane.
KEY_PITCH = 0.023  # m, center-to-center spacing of adjacent keys
WHITE_KEY_HALFWIDTH = 0.011
BLACK_KEY_HALFWIDTH = 0.0065
BLACK_KEY_RAISE = 0.006  # m above the white-key top surface
KEY_TRAVEL = 0.011  # m of depression mapped onto mu in [0, 1]

# Reference height of the white-key top surface. PhysicalParams.piano_height
# is randomized around this; fingertip z is reported relative to it.
PIANO_HEIGHT_NOMINAL = 0.10

# Finger linkage: one abduction joint swings the tip along the keyboard,
# two flexion joints lower it. Finger bases sit one key pitch apart.
ABDUCTION_REACH = 0.04  # m, lever arm of the abduction joint
LINK1 = 0.020
LINK2 = 0.015
REST_CLEARANCE = 0.008  # m of fingertip height above white keys at q = 0

FINGER_JOINT_INERTIA = 0.001  # kg m^2
SLIDER_MASS = 0.5  # kg, hand + mount moved by the slide rail

# Contact model: finger penetrating past the current key surface pushes with
# CONTACT_STIFFNESS newtons per unit of normalized overlap; the key itself is
# an overdamped spring (stiffness from PhysicalParams, damping fixed here).
CONTACT_STIFFNESS = 25.0
KEY_DAMPING = 0.05
MAX_KEY_DRIVE = 2.0  # normalized penetration cap, bounds friction force

# Per-joint position limits (rad; slider in m).
_SIDE_LIMIT = 0.7
_PROX_LIMITS = (-0.3, 1.1)
_DIST_LIMITS = (-0.3, 0.9)
SLIDER_LIMITS = (-0.08, 1.15)

JOINT_LIMITS_LOW = np.array(
    [-_SIDE_LIMIT, _PROX_LIMITS[0], _DIST_LIMITS[0]] * FINGER_COUNT
    + [SLIDER_LIMITS[0]]
)
JOINT_LIMITS_HIGH = np.array(
    [_SIDE_LIMIT, _PROX_LIMITS[1], _DIST_LIMITS[1]] * FINGER_COUNT
    + [SLIDER_LIMITS[1]]
)

JOINT_INERTIA = np.array([FINGER_JOINT_INERTIA] * 12 + [SLIDER_MASS])

# Semitone classes (midi % 12) that are black keys.
_BLACK_CLASSES = frozenset({1, 3, 6, 8, 10})


def is_black_key(key_index: int) -> bool:
    return (MIDI_LOW + key_index) % 12 in _BLACK_CLASSES


def default_key_tops() -> np.ndarray:
    """Top-surface height of each key relative to the white-key plane."""
    return np.array(
        [BLACK_KEY_RAISE if is_black_key(k) else 0.0 for k in range(KEY_COUNT)]
    )


def default_key_halfwidths() -> np.ndarray:
    return np.array(
        [
            BLACK_KEY_HALFWIDTH if is_black_key(k) else WHITE_KEY_HALFWIDTH
            for k in range(KEY_COUNT)
        ]
    )


def key_center_x(key_index) -> np.ndarray:
    """x coordinate of a key center (vectorized over key_index)."""
    return np.asarray(key_index) * KEY_PITCH
