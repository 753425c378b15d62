"""Tests for the particle environments."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wurl import envs
from wurl.envs import EnvConfig, ParticleEnv, rollout
from wurl.errors import ConfigError, StateError


def test_reset_spawns_at_center():
    for cfg in (envs.freerun(), envs.treemaze(), envs.freerun_nav()):
        env = ParticleEnv(cfg)
        np.testing.assert_array_equal(env.reset(), np.zeros(4))
        assert not env.in_wall(env.pos)
        assert env.t == 0 and env.goal_index == 0


def test_bundled_constants():
    cfg = envs.freerun()
    assert (cfg.half_extent, cfg.v_max, cfg.a_max, cfg.dt, cfg.horizon) == (10.0, 0.5, 0.1, 1.0, 100)
    nav = envs.freerun_nav()
    assert nav.step_penalty == 0.1 and nav.goal_radius == 1.0


def test_zero_action_stays_put():
    env = ParticleEnv(envs.freerun())
    ro = rollout(env, envs.zero_policy)
    assert len(ro.transitions) == 100
    np.testing.assert_array_equal(ro.states, np.zeros((100, 4)))


def test_constant_thrust_hand_computed():
    env = ParticleEnv(envs.freerun())
    env.reset()
    xs, vs = [], []
    for _ in range(7):
        tr = env.step([0.1, 0.0])
        xs.append(tr.next_state[0])
        vs.append(tr.next_state[2])
    # velocities 0.1, 0.2, 0.3, 0.4, 0.5 then clamped at v_max; x is their running sum
    np.testing.assert_allclose(vs, [0.1, 0.2, 0.3, 0.4, 0.5, 0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(xs[:3], [0.1, 0.3, 0.6], atol=1e-12)
    np.testing.assert_allclose(xs, np.cumsum(vs), atol=1e-12)
    assert np.all(np.diff(xs) > 0)


def test_action_clipped_to_bounds():
    env = ParticleEnv(envs.freerun())
    env.reset()
    tr = env.step([5.0, -5.0])
    np.testing.assert_array_equal(tr.action, [0.1, -0.1])


def test_boundary_projection_zeroes_normal_velocity():
    env = ParticleEnv(envs.freerun())
    env.reset()
    env.pos = np.array([9.8, 0.0])
    env.vel = np.array([0.5, 0.0])
    tr = env.step([0.1, 0.0])
    assert tr.next_state[0] == 10.0 and tr.next_state[2] == 0.0


def test_done_exactly_at_horizon():
    env = ParticleEnv(envs.freerun(horizon=5))
    env.reset()
    dones = [env.step([0.0, 0.0]).done for _ in range(5)]
    assert dones == [False] * 4 + [True]
    with pytest.raises(StateError):
        env.step([0.0, 0.0])


def test_step_before_reset_is_error():
    with pytest.raises(StateError):
        ParticleEnv(envs.freerun()).step([0.0, 0.0])


def test_horizon_one_rollout():
    ro = rollout(ParticleEnv(envs.freerun()), envs.random_policy(0.1), horizon=1)
    assert len(ro.transitions) == 1


def test_rollout_deterministic_given_seed():
    env = ParticleEnv(envs.treemaze())
    a = rollout(env, envs.random_policy(0.1), rng=np.random.default_rng(4)).states
    b = rollout(env, envs.random_policy(0.1), rng=np.random.default_rng(4)).states
    np.testing.assert_array_equal(a, b)


def test_config_validation():
    with pytest.raises(ConfigError):
        EnvConfig(horizon=0)
    with pytest.raises(ConfigError):
        EnvConfig(a_max=0.0)
    with pytest.raises(ConfigError):
        EnvConfig(goals=[(11.0, 0.0)])
    with pytest.raises(ConfigError):
        EnvConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ParticleEnv(EnvConfig(walls=[((-1.0, 0.0), (1.0, 0.0))]))


def test_config_round_trip():
    cfg = envs.treemaze()
    assert EnvConfig.from_dict(cfg.to_dict()) == cfg


def test_velocity_clamp_fuzz():
    """10^5 random actions never push the speed above v_max."""
    rng = np.random.default_rng(0)
    env = ParticleEnv(envs.freerun())
    worst = 0.0
    for _ in range(1000):
        env.reset()
        bias = rng.uniform(-0.1, 0.1, size=2)
        for _ in range(100):
            tr = env.step(bias + rng.uniform(-0.05, 0.05, size=2))
            worst = max(worst, float(np.linalg.norm(tr.next_state[2:])))
    assert worst <= 0.5 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_treemaze_containment(seed):
    """Random drifting rollouts stay inside the world and out of every wall."""
    rng = np.random.default_rng(seed)
    env = ParticleEnv(envs.treemaze())
    drift = rng.uniform(-0.1, 0.1, size=2)

    def policy(obs, r):
        return drift + r.uniform(-0.06, 0.06, size=2)

    ro = rollout(env, policy, rng=rng)
    for s in ro.states:
        assert env.in_bounds(s[:2])
        assert not env.in_wall(s[:2])
        assert np.linalg.norm(s[2:]) <= 0.5 + 1e-9


def test_treemaze_walls_block_straight_line():
    env = ParticleEnv(envs.treemaze())
    ro = rollout(env, lambda obs, rng: np.array([0.0, 0.1]))
    # the trunk wall at y = 2 with half-thickness 0.6 stops the particle at y = 1.4
    assert ro.states[:, 1].max() == pytest.approx(1.4, abs=1e-6)


def goal_seeker(cfg):
    """Proportional controller that heads for the currently active goal."""
    env_goals = [np.asarray(g) for g in cfg.goals]
    state = {"i": 0}

    def act(obs, rng):
        i = state["i"]
        if i < len(env_goals) and np.linalg.norm(obs[:2] - env_goals[i]) <= cfg.goal_radius:
            state["i"] = i = i + 1
        target = env_goals[min(i, len(env_goals) - 1)]
        return 0.2 * (target - obs[:2]) - 0.8 * obs[2:]
    return act


def test_navigation_goal_bonus_advances_index():
    cfg = envs.freerun_nav()
    env = ParticleEnv(cfg)
    env.reset()
    env.pos = np.array([3.5, 0.0])
    tr = env.step([0.0, 0.0])
    assert tr.reward == pytest.approx(50.0 - 0.1)
    assert env.goal_index == 1


def test_navigation_reward_accounting():
    cfg = envs.freerun_nav()
    env = ParticleEnv(cfg)
    ro = rollout(env, goal_seeker(cfg))
    goals = env.goal_index
    assert goals == 3 and ro.transitions[-1].terminal and len(ro.transitions) < 100
    assert ro.total_reward == pytest.approx(50.0 * goals - 0.1 * len(ro.transitions), abs=1e-9)
    ro = rollout(ParticleEnv(envs.freerun_nav(horizon=20)), envs.random_policy(0.1), rng=np.random.default_rng(1))
    assert ro.total_reward == pytest.approx(-0.1 * 20, abs=1e-9)
    assert ro.transitions[-1].done and not ro.transitions[-1].terminal


def test_reward_free_mode_is_silent():
    cfg = envs.freerun_nav()
    ro = rollout(ParticleEnv(cfg, reward_free=True), goal_seeker(cfg))
    assert len(ro.transitions) == 100
    assert all(tr.reward == 0.0 for tr in ro.transitions)


def test_trajectory_records_round_trip(tmp_path):
    ro = rollout(ParticleEnv(envs.freerun_nav()), envs.random_policy(0.1), rng=np.random.default_rng(2))
    path = tmp_path / "traj.txt"
    path.write_text(envs.trajectory_records(ro))
    data = envs.read_trajectory_records(path)
    assert data.shape == (100, 6)
    np.testing.assert_array_equal(data[:, 0], np.arange(100))
    np.testing.assert_array_equal(data[:, 1:5], ro.states)
