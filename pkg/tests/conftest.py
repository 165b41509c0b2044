import numpy as np
import pytest

from pianobot import song as song_mod
from pianobot.env import suggest_start_slider
from pianobot.physics import nominal_params


@pytest.fixture
def params():
    return nominal_params()


@pytest.fixture
def hold_timeline():
    return song_mod.load_fixture("hold_c4")


@pytest.fixture
def scale_timeline():
    return song_mod.load_fixture("c_major_scale")


def started_params(timeline):
    """Nominal params with the hand starting over the song's lowest key."""
    p = nominal_params()
    p.hand_start_slider = suggest_start_slider(timeline)
    return p


def random_snapshot(rng, force_targets=None):
    """A random KeySnapshot; force_targets=True guarantees >=1 target."""
    from pianobot.reward import KeySnapshot
    mu = rng.uniform(0.0, 1.0, 49)
    threshold = 0.6
    pressed = mu >= threshold
    targets = rng.random(49) < 0.1
    if force_targets is True and not targets.any():
        targets[rng.integers(49)] = True
    elif force_targets is False:
        targets[:] = False
    return KeySnapshot(mu=mu, pressed=pressed, targets=targets)
