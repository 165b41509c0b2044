"""Execution modes: observation fusion, information flow, the perturbed
plant proxy, bridge integration and abort handling."""

import numpy as np
import pytest

from pianobot import constants as C
from pianobot import exec_modes as xm
from pianobot import song as song_mod
from pianobot.bridge import BridgeClient, LoopbackTransport, PlantDevice
from pianobot.env import action_to_targets, targets_to_action
from pianobot.errors import BridgeTimeoutError, IntegrationFault
from pianobot.physics import PlantModel, nominal_params
from pianobot.policy.nets import ActorNet

from conftest import started_params


@pytest.fixture
def timeline():
    return song_mod.load_fixture("hold_c4")


@pytest.fixture
def nom(timeline):
    return started_params(timeline)


def actor_policy(seed=42):
    return ActorNet(356, 13, hidden=(8,), seed=seed)


class ScriptPolicy:
    """Open-loop action script; ignores observations entirely."""

    def __init__(self, actions):
        self.actions = list(actions)
        self.i = 0

    def act(self, vec, deterministic=True):
        a = self.actions[min(self.i, len(self.actions) - 1)]
        self.i += 1
        return a


def ramp_policy(timeline, params):
    """Slow proximal curl from flat to full depth across the episode, so
    press timing is sensitive to plant parameter perturbations."""
    model = PlantModel(params)
    model.reset()
    base = model.state.q.copy()
    n = len(timeline)
    actions = []
    for i in range(n):
        tgt = base.copy()
        tgt[1] = 1.1 * i / (n - 1)
        actions.append(targets_to_action(tgt))
    return ScriptPolicy(actions)


def jump_policy(params, at=3):
    model = PlantModel(params)
    model.reset()
    base = model.state.q.copy()
    curl = base.copy()
    curl[1], curl[2] = 1.1, 0.9
    hold = targets_to_action(base)
    return ScriptPolicy([hold] * at + [targets_to_action(curl)] * 100)


class SpyPlant:
    """Records every command; replies with scripted keys and echoed joints."""

    def __init__(self, keys_fn=None, fail_at=None, exc=BridgeTimeoutError):
        self.cmds = []
        self.keys_fn = keys_fn or (lambda t: np.zeros(C.KEY_COUNT, dtype=bool))
        self.fail_at = fail_at
        self.exc = exc

    def reset(self):
        self.cmds = []

    def step(self, t, cmd):
        if self.fail_at is not None and t >= self.fail_at:
            raise self.exc(f"scripted failure at step {t}")
        self.cmds.append(np.array(cmd, dtype=float))
        return self.keys_fn(t), np.array(cmd, dtype=float), True

    def close(self):
        pass


class TestCanonicalMode:
    @pytest.mark.parametrize("raw,want", [
        ("mirror", xm.MIRROR), ("JointMirroring", xm.MIRROR),
        ("joint_mirroring", xm.MIRROR), ("Mirroring", xm.MIRROR),
        ("HYBRID", xm.HYBRID), ("hybrid", xm.HYBRID),
        ("real", xm.REAL), ("RealWorld", xm.REAL),
        ("real_world", xm.REAL), ("real-world", xm.REAL),
    ])
    def test_aliases_resolve(self, raw, want):
        assert xm.canonical_mode(raw) == want

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="unknown mode"):
            xm.canonical_mode("dreams")


class TestProvenance:
    def test_mirror_sources_everything_from_sim(self):
        src = xm.expected_provenance(xm.MIRROR)
        assert src == {"joints": "sim", "slider": "sim", "pressed": "sim",
                       "intended": "song", "future": "song"}

    def test_hybrid_sources_only_pressed_from_plant(self):
        src = xm.expected_provenance(xm.HYBRID)
        assert src["pressed"] == "plant"
        assert src["joints"] == "sim" and src["slider"] == "sim"

    def test_real_sources_all_state_from_plant(self):
        src = xm.expected_provenance(xm.REAL)
        assert src["joints"] == src["slider"] == src["pressed"] == "plant"
        assert src["intended"] == src["future"] == "song"


class TestProxyParams:
    def test_zero_gap_is_identity(self, nom):
        assert xm.proxy_params(nom, 0.0).pack().tobytes() \
            == nom.pack().tobytes()

    def test_perturbation_directions_are_fixed(self, nom):
        p = xm.proxy_params(nom, 1.0)
        assert (p.joint_damping > nom.joint_damping).all()
        assert (p.joint_stiffness < nom.joint_stiffness).all()
        assert p.key_spring_stiffness > nom.key_spring_stiffness
        assert p.finger_key_friction > nom.finger_key_friction
        assert p.key_press_threshold > nom.key_press_threshold
        assert p.piano_height > nom.piano_height
        p.validate()

    def test_threshold_capped_below_one(self, nom):
        high = nom.copy()
        high.key_press_threshold = 0.94
        assert xm.proxy_params(high, 1.0).key_press_threshold == 0.95

    def test_gap_scales_magnitude(self, nom):
        half = xm.proxy_params(nom, 0.5)
        full = xm.proxy_params(nom, 1.0)
        d_half = half.key_press_threshold - nom.key_press_threshold
        d_full = full.key_press_threshold - nom.key_press_threshold
        assert abs(d_full - 2.0 * d_half) < 1e-12


class TestModeEquivalence:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_identical_plant_makes_all_modes_agree(self, timeline, nom, seed):
        # With the plant an exact copy of the shadow, observation sourcing
        # cannot matter: all three modes must produce bit-identical plant
        # key logs and identical scores.
        policy = actor_policy(seed)
        results = {}
        for mode in xm.MODES:
            cfg = xm.ModeConfig(mode=mode, shadow_params=nom,
                                plant=xm.SimPlant(nom.copy()))
            results[mode] = xm.run_episode(policy, timeline, cfg)
        ref = results[xm.MIRROR]
        assert not ref.aborted
        ref_pressed = [r["pressed"] for r in ref.records]
        for mode in (xm.HYBRID, xm.REAL):
            res = results[mode]
            assert [r["pressed"] for r in res.records] == ref_pressed
            assert res.scores_plant == ref.scores_plant
            assert not res.aborted
        assert ref.divergence_steps == 0
        assert results[xm.HYBRID].divergence_steps == 0

    def test_episode_log_length_and_fields(self, timeline, nom):
        cfg = xm.ModeConfig(mode=xm.HYBRID, shadow_params=nom,
                            plant=xm.SimPlant(nom.copy()))
        res = xm.run_episode(actor_policy(), timeline, cfg)
        assert len(res.records) == len(timeline)
        for rec in res.records:
            assert rec["provenance"]["pressed"] == "plant"
            assert rec["fresh"] is True
            assert "sim_pressed" in rec


class TestInformationFlow:
    class SpyPolicy:
        def __init__(self, seed=42):
            self.net = actor_policy(seed)
            self.seen = []

        def act(self, vec, deterministic=True):
            self.seen.append(np.array(vec, copy=True))
            return self.net.act(vec, deterministic=deterministic)

    def test_mirror_policy_never_sees_the_plant(self, timeline, nom):
        # A wildly lying plant must not change a single policy input under
        # joint mirroring.
        honest, lying = self.SpyPolicy(), self.SpyPolicy()
        xm.run_episode(honest, timeline, xm.ModeConfig(
            mode=xm.MIRROR, shadow_params=nom, plant=xm.SimPlant(nom.copy())))
        all_keys = np.ones(C.KEY_COUNT, dtype=bool)
        xm.run_episode(lying, timeline, xm.ModeConfig(
            mode=xm.MIRROR, shadow_params=nom,
            plant=SpyPlant(keys_fn=lambda t: all_keys.copy())))
        assert len(honest.seen) == len(lying.seen)
        for a, b in zip(honest.seen, lying.seen):
            assert np.array_equal(a, b)

    def test_real_mode_leaves_shadow_idle(self, timeline, nom):
        # Plant presses exactly the targets; the never-advanced shadow
        # presses nothing. Plant-side is perfect, sim-side scores zero.
        plant = SpyPlant(keys_fn=lambda t: timeline.targets(t).copy())
        cfg = xm.ModeConfig(mode=xm.REAL, shadow_params=nom, plant=plant)
        res = xm.run_episode(actor_policy(), timeline, cfg)
        assert res.scores_plant.f1 == 1.0
        assert res.scores_sim.f1 == 0.0
        assert res.divergence_steps == 0

    def test_hybrid_observation_mixes_sources(self, timeline, nom):
        # Pressed segment comes from the plant's reply, joints stay the
        # shadow's own; compare against a mirror run of the same policy.
        marker = np.zeros(C.KEY_COUNT, dtype=bool)
        marker[[3, 40]] = True
        spy_h = self.SpyPolicy()
        xm.run_episode(spy_h, timeline, xm.ModeConfig(
            mode=xm.HYBRID, shadow_params=nom,
            plant=SpyPlant(keys_fn=lambda t: marker.copy())))
        # observation t>=1 carries the marker in the pressed slice
        for vec in spy_h.seen[1:]:
            assert np.array_equal(vec[13:62], marker.astype(float))
        assert not spy_h.seen[0][13:62].any()  # nothing pressed before t=0


class TestGapMonotonicity:
    def test_divergence_never_decreases_with_gap(self, timeline, nom):
        divs = []
        for gap in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            cfg = xm.ModeConfig(mode=xm.MIRROR, shadow_params=nom,
                                plant=xm.SimPlant(xm.proxy_params(nom, gap)))
            res = xm.run_episode(ramp_policy(timeline, nom), timeline, cfg)
            divs.append(res.divergence_steps)
        assert divs[0] == 0
        assert divs == sorted(divs)
        assert divs[-1] > 0


class TestForwardPositions:
    def heavy(self, nom):
        p = nom.copy()
        p.joint_damping = p.joint_damping * 30.0
        return p

    def test_default_forwards_action_targets(self, timeline, nom):
        heavy = self.heavy(nom)
        spy = SpyPlant()
        policy = jump_policy(heavy)
        xm.run_episode(policy, timeline, xm.ModeConfig(
            mode=xm.MIRROR, shadow_params=heavy, plant=spy))
        want = action_to_targets(policy.actions[4])
        assert np.allclose(spy.cmds[4], want, atol=1e-12)

    def test_flag_forwards_lagging_measured_positions(self, timeline, nom):
        heavy = self.heavy(nom)
        spy = SpyPlant()
        policy = jump_policy(heavy)
        xm.run_episode(policy, timeline, xm.ModeConfig(
            mode=xm.MIRROR, shadow_params=heavy, plant=spy,
            forward_positions=True))
        target_prox = action_to_targets(policy.actions[4])[1]
        sent_prox = spy.cmds[4][1]
        # heavily damped shadow is still travelling: the measured position
        # forwarded to the plant sits well short of the commanded target
        assert sent_prox < 0.5 < target_prox


class TestAbortHandling:
    @pytest.mark.parametrize("exc", [BridgeTimeoutError, IntegrationFault])
    def test_plant_fault_aborts_with_partial_log(self, timeline, nom, exc):
        plant = SpyPlant(fail_at=5, exc=exc)
        cfg = xm.ModeConfig(mode=xm.MIRROR, shadow_params=nom, plant=plant)
        res = xm.run_episode(actor_policy(), timeline, cfg)
        assert res.aborted
        assert res.abort_reason.startswith(exc.__name__)
        assert len(res.records) == 6  # 5 full steps + the abort marker
        assert res.records[-1] == {"t": 5,
                                   "aborted": res.abort_reason}

    def test_clean_run_is_not_flagged(self, timeline, nom):
        cfg = xm.ModeConfig(mode=xm.MIRROR, shadow_params=nom,
                            plant=xm.SimPlant(nom.copy()))
        res = xm.run_episode(actor_policy(), timeline, cfg)
        assert not res.aborted
        assert res.abort_reason == ""


class TestBridgeIntegration:
    def loop_plant(self, params, delays=None):
        model = PlantModel(params)
        model.reset()
        client = BridgeClient(LoopbackTransport(PlantDevice(model),
                                                delays=delays))
        return xm.BridgePlant(client)

    def test_bridged_plant_equals_internal_plant(self, timeline, nom):
        policy = actor_policy(7)
        direct = xm.run_episode(policy, timeline, xm.ModeConfig(
            mode=xm.REAL, shadow_params=nom, plant=xm.SimPlant(nom.copy())))
        bridged = xm.run_episode(policy, timeline, xm.ModeConfig(
            mode=xm.REAL, shadow_params=nom, plant=self.loop_plant(nom.copy())))
        assert [r["pressed"] for r in bridged.records] \
            == [r["pressed"] for r in direct.records]
        assert bridged.scores_plant == direct.scores_plant
        assert not bridged.aborted

    def test_deadline_misses_counted_as_stale(self, timeline, nom):
        plant = self.loop_plant(nom.copy(), delays={2: 0.05})
        cfg = xm.ModeConfig(mode=xm.MIRROR, shadow_params=nom, plant=plant)
        res = xm.run_episode(actor_policy(), timeline, cfg)
        assert res.stale_steps == 1
        assert not res.aborted
        assert res.records[2]["fresh"] is False

    def test_persistent_timeouts_abort_episode(self, timeline, nom):
        client = BridgeClient(LoopbackTransport(lambda line: None))
        cfg = xm.ModeConfig(mode=xm.MIRROR, shadow_params=nom,
                            plant=xm.BridgePlant(client))
        res = xm.run_episode(actor_policy(), timeline, cfg)
        assert res.aborted
        assert "BridgeTimeoutError" in res.abort_reason
        assert res.stale_steps == 2  # two reused-state steps before abort
