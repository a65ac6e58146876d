import numpy as np
import pytest
from hypothesis import given, strategies as st

from contactvla.bench import (CalibrationError, EpisodeRecord, InsertionEnv, InsertionParams, InsertionScript,
                              PeelEnv, PeelParams, PeelScript, compute_pcr, compute_sr, generate_demos, make_env,
                              run_script)
from contactvla.bench.common import sensor_lift
from contactvla.copilot.scripted import ScriptedGait


def test_compute_sr_examples():
    assert compute_sr([True] * 6 + [False] * 14) == 0.30
    assert compute_sr([False] * 20) == 0.0
    assert compute_sr([True] * 20) == 1.0
    with pytest.raises(ValueError):
        compute_sr([])


@pytest.mark.parametrize("frac,expected", [(0.80, 0.75), (1.0, 1.0), (0.24, 0.0), (0.25, 0.25), (0.5, 0.5)])
def test_compute_pcr_examples(frac, expected):
    assert compute_pcr(frac) == expected


def test_compute_pcr_rejects_out_of_range():
    with pytest.raises(ValueError):
        compute_pcr(1.5)


def test_sensor_lift_is_recoverable():
    j = sensor_lift(3, 14, seed=0)
    raw = np.random.default_rng(0).normal(size=(5, 3))
    rec = (raw @ j.T) @ j / (14 / 3)
    np.testing.assert_allclose(rec, raw, atol=1e-12)


# -- insertion ------------------------------------------------------------------
def test_insertion_free_space_is_silent():
    env = InsertionEnv()
    obs = env.reset(np.arange(10))
    assert not obs.force.any() and not obs.tactile.any()
    obs = env.step(np.zeros((10, 5)))
    assert not obs.force.any() and not obs.tactile.any()


def test_insertion_vision_noise_default():
    p = InsertionParams()
    assert p.vision_noise == pytest.approx(3 * p.tolerance)


def test_insertion_normal_force_proportional_to_penetration():
    env = InsertionEnv()
    env.reset([0])
    env.hole[:] = 1.0  # far away: flat surface under the peg
    env.x[:] = 0.0
    env.z[:] = env.z_cmd[:] = 0.0
    env.step(np.array([[0.0, -0.25, 1.0, 0.0, 0.0]]))
    f1 = env.force_xz[0, 1]
    env.step(np.array([[0.0, -0.25, 1.0, 0.0, 0.0]]))
    f2 = env.force_xz[0, 1]
    assert f1 == pytest.approx(env.p.contact_k * 0.01) and f2 == pytest.approx(2 * f1)


def test_insertion_chamfer_points_to_hole():
    env = InsertionEnv()
    env.reset(np.arange(2))
    env.hole[:] = [0.05, -0.05]
    env.x[:] = 0.0
    env.z[:] = env.z_cmd[:] = 0.0
    env.step(np.tile([0.0, -0.5, 0.0, 0.0, 0.0], (2, 1)))
    assert env.force_xz[0, 0] > 0 > env.force_xz[1, 0]


def test_insertion_excess_force_loses_grip():
    env = InsertionEnv()
    env.reset([0])
    env.hole[:] = 1.0
    env.z[:] = env.z_cmd[:] = 0.0
    for _ in range(5):
        env.step(np.array([[0.0, -1.0, -1.0, 0.0, 0.0]]))
    assert env.lost[0] and env.done[0] and env.slip[0] >= 1.0


def test_insertion_identifiability_gap():
    rates = {}
    for mode in ("expert", "force", "vision"):
        env = InsertionEnv()
        env.reset(np.arange(200))
        script = InsertionScript(mode)
        while not env.done.all():
            env.step(script(env))
        rates[mode] = env.success.mean()
    assert rates["expert"] >= 0.95 and rates["force"] > 0.90 and rates["vision"] <= 0.30


def test_insertion_success_requires_depth_within_tolerance():
    env = InsertionEnv()
    env.reset(np.arange(50))
    script = InsertionScript("expert")
    while not env.done.all():
        env.step(script(env))
    s = env.success
    assert np.all(np.abs(env.x[s] - env.hole[s]) < env.p.tolerance)
    assert np.all(env.z[s] <= -env.p.depth + 1e-9)


# -- peel -----------------------------------------------------------------------
def gait_copilot(env):
    gait = ScriptedGait(env.rp)
    gait.reset(env.n)
    return lambda obs: gait(env.state, env.target_dir)


def test_peel_zero_contact_stroke_removes_nothing():
    env = PeelEnv()
    env.reset(np.arange(4))
    for _ in range(30):
        env.step(np.tile(np.r_[-1.0, 1.0, np.zeros(8)], (4, 1)))  # tool retracted, stroke pushed
    assert not env.peeled.any()


def test_peel_full_ring_gives_pcr_one():
    env = PeelEnv()
    env.reset([0])
    env.peeled[:] = True
    assert env.outcomes()["pcr"][0] == 1.0 and env.outcomes()["success"][0]


def test_peel_fraction_monotone_and_spans_follow_strokes():
    env = PeelEnv()
    seeds = np.arange(6)
    env.reset(seeds)
    script = PeelScript(copilot=gait_copilot(env))
    prev = env.peeled_fraction()
    triggers = []
    while not env.done.all():
        a, _ = script(env)
        triggers.append(a[:, -1].copy())
        env.step(a)
        cur = env.peeled_fraction()
        assert np.all(cur >= prev)
        prev = cur
    trig = np.array(triggers)
    for i in range(len(seeds)):
        rises = int(np.sum(np.diff(np.r_[0.0, trig[:, i]]) > 0))
        assert rises >= min(env.strokes[i], env.p.strokes - 1) - 1


def test_peel_demos_have_trigger_span_per_turn():
    env = PeelEnv()
    env.reset(np.arange(3))
    demos = run_script(env, PeelScript(copilot=gait_copilot(env)), np.arange(3))
    for ep, strokes in zip(demos, env.strokes):
        spans = int(np.sum(np.diff(np.r_[0.0, ep.trigger]) > 0))
        # a turn follows every completed stroke except the last
        turns = min(int(strokes), env.p.strokes - 1)
        if not env.dropped[ep.episode_id]:
            assert spans >= turns
        assert set(np.unique(ep.trigger)) <= {0.0, 1.0}


# -- demonstrations -------------------------------------------------------------
def test_insertion_demos_deterministic_and_successful():
    a = generate_demos("insertion", 20, seed=3)
    b = generate_demos("insertion", 20, seed=3)
    assert len(a) == 20 and all(ep.success for ep in a)
    assert [ep.episode_id for ep in a] == list(range(20))
    for x, y in zip(a, b):
        assert np.array_equal(x.action, y.action) and np.array_equal(x.force, y.force)


def test_demos_row_limit_and_labels():
    for ep in generate_demos("insertion", 10):
        ep.validate(max_steps=InsertionParams().max_steps)


def test_calibration_error_on_impossible_task():
    env = make_env("insertion", max_steps=3)  # too short to reach the hole
    with pytest.raises(CalibrationError):
        generate_demos("insertion", 30, env=env)


def test_episode_record_validation():
    ep = EpisodeRecord(0, "insertion", 0, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 14)), np.zeros((2, 60)),
                       np.zeros((2, 5)), np.array([0.0, 0.5]))
    with pytest.raises(ValueError):
        ep.validate()


@given(st.floats(0, 1))
def test_property_pcr_quarter_floor(f):
    v = compute_pcr(f)
    assert v in (0.0, 0.25, 0.5, 0.75, 1.0) and v <= f + 1e-9 and f - v < 0.25 + 1e-9


@given(st.lists(st.booleans(), min_size=1, max_size=50))
def test_property_sr_is_fraction(outcomes):
    assert compute_sr(outcomes) == sum(outcomes) / len(outcomes)


def test_perturbed_demos_keep_clean_labels():
    seeds = np.arange(30)
    clean = run_script(InsertionEnv(), InsertionScript("expert"), seeds)
    noisy_env = InsertionEnv()
    noisy = run_script(noisy_env, InsertionScript("expert"), seeds, perturb={1: 0.5})
    # same start, but the executed noise changes the visited states
    assert all(np.array_equal(a.proprio[0], b.proprio[0]) for a, b in zip(clean, noisy))
    assert any(len(a) != len(b) or not np.array_equal(a.proprio, b.proprio) for a, b in zip(clean, noisy))
    # replaying label + the per-episode noise stream revisits the states, and the expert's
    # clean command at each of them is exactly the recorded label
    env = InsertionEnv()
    env.reset(seeds)
    rngs = [np.random.default_rng([int(s), 13]) for s in seeds]
    script = InsertionScript("expert")
    t = 0
    while not env.done.all():
        label = script(env)
        for i, ep in enumerate(noisy):
            if t < len(ep):
                np.testing.assert_array_equal(ep.action[t], label[i])
        executed = label.copy()
        executed[:, 1] = np.clip(label[:, 1] + np.array([r.normal(0.0, 1.0, 1)[0] for r in rngs]) * 0.5, -1, 1)
        env.step(executed)
        t += 1
    assert noisy_env.success.mean() >= 0.9
    # deeper presses than the clean expert ever makes show up in the data
    assert max(e.force.max() for e in noisy) > max(e.force.max() for e in clean)
