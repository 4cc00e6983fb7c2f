import math

import numpy as np
import pytest

from skillsched.envs import (GRASP_APERTURE, LIFT_Y, OBJECTS, SLOT_OFFSET,
                             TOL_POS, V_MAX, ArenaState, PointArenaEnv,
                             TaskSpec, make_task, reward_dense_reach,
                             reward_gated_walk, reward_sparse_stack,
                             shaped_closeness, task_manifest, wrap_counter)
from skillsched.errors import ConfigurationError
from skillsched.seeding import make_rng


def fresh(task="reach_g", seed=0, **kw):
    env, spec, _ = make_task(task, **kw)
    obs = env.reset(make_rng(seed))
    return env, spec, obs


def manual_state(agent, aperture=0.6, objects=None, held=-1):
    objects = objects if objects is not None else np.array(
        [[0.35, 0.25], [0.65, 0.25], [0.5, 0.12]])
    return ArenaState(agent=np.array(agent, dtype=float), aperture=aperture,
                      objects=np.array(objects, dtype=float), held=held)


def test_zero_action_keeps_state():
    env, _, obs0 = fresh()
    st0 = (env.state.agent.copy(), env.state.aperture, env.state.objects.copy())
    obs1, _, _ = env.step(np.zeros(3))
    assert np.array_equal(env.state.agent, st0[0])
    assert env.state.aperture == st0[1]
    assert np.array_equal(env.state.objects, st0[2])
    assert env.state.step == 1
    # only the time channel moves
    assert obs1[-1] != obs0[-1]
    assert np.array_equal(obs1[:-1], obs0[:-1])


def test_dense_reach_inside_tolerance_is_one():
    agent = np.array([0.4, 0.4])
    target = agent + np.array([TOL_POS * 0.99, 0.0])
    assert reward_dense_reach(agent, target, TOL_POS, 0.1) == 1.0


def test_dense_reach_shaping_value():
    # scaled distance * eps_shape == 1  ->  1 - tanh^2(1)
    agent = np.array([0.0, 0.0])
    target = np.array([10.0 * TOL_POS, 0.0])
    got = reward_dense_reach(agent, target, TOL_POS, eps_shape=0.1)
    assert got == pytest.approx(1.0 - math.tanh(1.0) ** 2, abs=1e-12)
    assert got == pytest.approx(0.419974, abs=1e-6)


def test_dense_reach_monotone_outside():
    agent = np.array([0.0, 0.0])
    vals = [reward_dense_reach(agent, np.array([d, 0.0]), TOL_POS, 0.1)
            for d in np.linspace(0.06, 1.0, 30)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert all(0.0 < v <= 1.0 for v in vals)


def test_sparse_stack_reward_cases():
    yellow = np.array([0.65, 0.25])
    on_slot = yellow + np.array([0.0, SLOT_OFFSET])
    objs = np.array([on_slot, yellow, [0.5, 0.12]])

    far = manual_state([0.2, 0.8], objects=objs)
    assert reward_sparse_stack(far, "green", "yellow") == 1.0

    touching = manual_state(on_slot + np.array([0.0, TOL_POS * 0.5]), objects=objs)
    assert reward_sparse_stack(touching, "green", "yellow") == 0.0  # leave factor

    held = manual_state([0.2, 0.8], objects=objs, held=OBJECTS.index("green"))
    assert reward_sparse_stack(held, "green", "yellow") == 0.0

    misplaced = manual_state([0.2, 0.8], objects=np.array(
        [on_slot + np.array([0.2, 0.0]), yellow, [0.5, 0.12]]))
    assert reward_sparse_stack(misplaced, "green", "yellow") == 0.0


def test_gated_walk_reward_values():
    assert reward_gated_walk(True, 0.05, 0.03) == 0.0
    assert reward_gated_walk(False, 0.03, 0.03) == pytest.approx(1.1)
    assert reward_gated_walk(False, 0.0, 0.03) == pytest.approx(0.5)


def test_two_phase_gate_clears_after_stand_sequence():
    env, _, _ = fresh("two_phase")
    assert env.state.down
    _, r, _ = env.step(np.array([0.5, 0.5, 0.05]))  # moving: no progress
    assert r == 0.0 and env.state.stand_count == 0
    for _ in range(3):  # still + gripper pulse
        _, r, _ = env.step(np.array([0.0, 0.0, 0.05]))
    assert not env.state.down
    _, r, _ = env.step(np.array([0.03, 0.0, 0.0]))
    assert r == pytest.approx(1.1)


def test_grasp_and_release():
    env, _, _ = fresh("lift_g")
    st = env.state
    st.agent = st.obj("green").copy()
    st.aperture = 0.6
    env.step(np.zeros(3))
    assert env.state.held == -1
    env.step(np.array([0.0, 0.0, -0.05]))  # closing
    env.step(np.array([0.0, 0.0, -0.05]))
    assert env.state.aperture < GRASP_APERTURE
    assert env.state.held == OBJECTS.index("green")
    # carried object follows the agent
    env.step(np.array([0.04, 0.04, 0.0]))
    assert np.array_equal(env.state.obj("green"), env.state.agent)
    env.step(np.array([0.0, 0.0, 0.05]))  # open -> release
    assert env.state.held == -1


def test_grasp_exclusivity():
    env, _, _ = fresh("stack_gy")
    st = env.state
    st.objects[0] = st.objects[1].copy()  # two objects at one point
    st.agent = st.objects[0].copy()
    st.aperture = 0.1
    for _ in range(30):
        env.step(np.array([0.01, 0.0, -0.05]))
        assert sum(env.state.held == j for j in range(3)) <= 1


def test_lift_sparse_reward():
    env, _, _ = fresh("lift_g")
    st = env.state
    st.objects[0] = np.array([0.5, LIFT_Y + 0.01])
    _, r, _ = env.step(np.zeros(3))
    assert r == 1.0
    st.objects[0] = np.array([0.5, LIFT_Y - 0.05])
    _, r, _ = env.step(np.zeros(3))
    assert r == 0.0


def test_determinism_bitwise():
    rng = make_rng(5)
    actions = rng.normal(scale=0.05, size=(50, 3))

    def rollout():
        env, _, obs = fresh("stack_gy", seed=7)
        traj = [obs]
        for a in actions:
            obs, r, done = env.step(a)
            traj.append(np.concatenate([obs, [r, float(done)]]))
        return np.concatenate(traj)

    assert np.array_equal(rollout(), rollout())


def test_episode_truncates_at_spec_length():
    env, spec, _ = fresh("reach_g")
    done = False
    for t in range(spec.episode_len):
        _, _, done = env.step(np.zeros(3))
    assert done


def test_make_task_manifests():
    _, _, manifest = make_task("stack_gy")
    useful = [ref.task_id for ref in manifest["useful"]]
    assert useful == ["reach_g", "close", "lift_g", "hover_gy"]
    assert len(manifest["distractor"]) == 6

    _, _, m_lift = make_task("lift_g")
    assert len(m_lift["useful"]) == 2
    assert len(m_lift["distractor"]) == 4

    _, _, m_pyr = make_task("pyramid")
    assert len(m_pyr["useful"]) == 9 and len(m_pyr["distractor"]) == 3

    with pytest.raises(ConfigurationError):
        make_task("no_such_task")


def test_goal_obstacle_wall_and_drag():
    env, _, _ = fresh("goal_obstacle")
    assert env.drag == 2.0  # transfer setting doubles drag
    env_pre, _, _ = make_task("goal_obstacle", pretrain=True)[0], None, None
    # wall blocks direct crossing within its x-range
    env.state.agent = np.array([0.5, 0.54])
    obs, _, _ = env.step(np.array([0.0, 0.05, 0.0]))
    assert env.state.agent[1] < 0.56
    # outside the wall span the crossing is free
    env.state.agent = np.array([0.1, 0.54])
    env.step(np.array([0.0, 0.05, 0.0]))
    assert env.state.agent[1] > 0.56


def test_goal_obstacle_push_respects_drag():
    def push_once(drag):
        spec = TaskSpec(task_id="goal_obstacle", reward_kind="sparse")
        env = PointArenaEnv(spec, drag=drag)
        env.reset(make_rng(3))
        env.state.agent = env.state.objects[2] - np.array([0.0, 0.05])
        before = env.state.objects[2][1]
        env.step(np.array([0.0, 0.05, 0.0]))
        return env.state.objects[2][1] - before

    assert push_once(1.0) > push_once(2.0) > 0.0


def test_wrap_counter():
    obs = np.array([1.0, 2.0])
    assert np.array_equal(wrap_counter(obs, 50, 50), np.array([1.0, 2.0, 1.0]))
    assert wrap_counter(obs, 1, 50)[-1] == pytest.approx(0.02)
    with pytest.raises(ConfigurationError):
        wrap_counter(obs, 0, 50)


def test_observation_dims():
    for task, want in [("reach_g", 19), ("stack_gy", 19), ("two_phase", 8),
                       ("goal_obstacle", 8)]:
        env, spec, _ = make_task(task)
        obs = env.reset(make_rng(0))
        assert obs.shape == (want,)
        assert spec.obs_dim == want


def test_positions_stay_clamped():
    env, _, _ = fresh("reach_g")
    for _ in range(100):
        env.step(np.array([0.05, 0.05, 0.05]))
    assert np.all(env.state.agent <= 1.0) and np.all(env.state.agent >= 0.0)
    assert 0.0 <= env.state.aperture <= 1.0


def test_shaped_closeness_envelope():
    assert shaped_closeness(0.5, 0.1) == 1.0
    vals = [shaped_closeness(d, 0.1) for d in np.linspace(1.01, 40, 50)]
    assert all(0.0 < v < 1.0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))
