"""Tests for the soft actor-critic backend."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wurl import envs
from wurl.envs import ParticleEnv, Transition
from wurl.gradcheck import run_gradchecks
from wurl.sac import (Actor, CriticPair, ReplayBuffer, SacAgent, SacConfig, act, relabel_rewards,
                      sac_update)


def small_agent(seed=0, **kw):
    cfg = SacConfig(hidden=(16, 16), batch_size=8, **kw)
    return SacAgent(4, 2, 0.1, cfg, rng=np.random.default_rng(seed))


def fill(agent, n, reward=0.0, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        agent.buffer.add(rng.normal(size=4), rng.uniform(-0.1, 0.1, 2), reward, rng.normal(size=4))


def test_zero_actor_deterministic_action_is_zero():
    actor = Actor(4, 2, 0.1, hidden=(8,), init="zeros")
    np.testing.assert_array_equal(act(actor, np.ones(4), deterministic=True), np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 5.0))
def test_actions_within_bounds(seed, a_max):
    rng = np.random.default_rng(seed)
    actor = Actor(4, 2, a_max, hidden=(8,), rng=rng)
    actor.net.flat[:] *= 50  # push the pre-squash values far out
    obs = rng.normal(size=(64, 4)) * 10
    for det in (True, False):
        a = actor.act(obs, det, rng)
        assert np.all(np.abs(a) <= a_max)


def test_log_std_clamped():
    actor = Actor(4, 2, 0.1, hidden=(8,), init="zeros")
    actor.net.biases[-1][2:] = [100.0, -100.0]
    _, log_std = actor.distribution(np.zeros(4))
    np.testing.assert_array_equal(log_std, [2.0, -20.0])


def test_fixed_seed_repeatable_action():
    actor = Actor(4, 2, 0.1, rng=np.random.default_rng(0))
    a = actor.act(np.ones(4), rng=np.random.default_rng(5))
    b = actor.act(np.ones(4), rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        actor.act(np.ones(4))


def test_log_prob_integrates_to_one():
    """The squashed density integrates to the Gaussian mass of the eps grid."""
    actor = Actor(1, 1, 0.5, hidden=(4,), rng=np.random.default_rng(0))
    grid = np.linspace(-3, 3, 4001)
    obs = np.zeros((grid.size, 1))
    a, logp = actor.sample_with_log_prob(obs, grid[:, None])
    # change of variables: integral over a of p(a) = integral over eps of p(a(eps)) da/deps
    da = np.gradient(a[:, 0], grid)
    assert np.trapezoid(np.exp(logp) * da, grid) == pytest.approx(np.trapezoid(np.exp(-grid ** 2 / 2) / np.sqrt(2 * np.pi), grid), rel=1e-3)


def test_buffer_ring_and_sampling():
    buf = ReplayBuffer(1, 1, capacity=3)
    assert buf.sample(1, np.random.default_rng(0)) is None
    for i in range(5):
        buf.add([i], [0.0], float(i), [i + 1])
    assert len(buf) == 3
    assert sorted(buf.rew.tolist()) == [2.0, 3.0, 4.0]
    assert buf.sample(4, np.random.default_rng(0)) is None
    batch = buf.sample(3, np.random.default_rng(0))
    assert set(batch["rew"]) <= {2.0, 3.0, 4.0}
    with pytest.raises(ValueError):
        ReplayBuffer(1, 1, capacity=0)


def test_update_skips_on_small_buffer():
    agent = small_agent()
    fill(agent, 7)
    before = [n.flat.copy() for n in agent.networks().values()]
    assert sac_update(agent) is None
    for b, n in zip(before, agent.networks().values()):
        np.testing.assert_array_equal(b, n.flat)


def test_update_returns_diagnostics():
    agent = small_agent()
    fill(agent, 32)
    out = sac_update(agent)
    assert set(out) == {"critic_loss", "actor_loss", "entropy"}
    assert all(np.isfinite(v) for v in out.values())


def test_tau_one_copies_online():
    agent = small_agent()
    fill(agent, 32)
    sac_update(agent, tau=1.0)
    c = agent.critics
    np.testing.assert_array_equal(c.q1_target.flat, c.q1.flat)
    np.testing.assert_array_equal(c.q2_target.flat, c.q2.flat)


def test_tau_zero_freezes_targets():
    agent = small_agent()
    fill(agent, 32)
    old = agent.critics.q1_target.flat.copy(), agent.critics.q2_target.flat.copy()
    for _ in range(3):
        sac_update(agent, tau=0.0)
    np.testing.assert_array_equal(agent.critics.q1_target.flat, old[0])
    np.testing.assert_array_equal(agent.critics.q2_target.flat, old[1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_soft_update_is_convex_combination(seed, tau):
    rng = np.random.default_rng(seed)
    c = CriticPair(4, 2, hidden=(8,), rng=rng)
    c.q1.flat[:] = rng.normal(size=c.q1.flat.size)
    c.q2.flat[:] = rng.normal(size=c.q2.flat.size)
    old1, old2 = c.q1_target.flat.copy(), c.q2_target.flat.copy()
    c.soft_update(tau)
    np.testing.assert_allclose(c.q1_target.flat, tau * c.q1.flat + (1 - tau) * old1, atol=1e-12)
    np.testing.assert_allclose(c.q2_target.flat, tau * c.q2.flat + (1 - tau) * old2, atol=1e-12)


def test_bandit_critic_converges_to_constant_reward():
    """With discount 0 the Bellman target is the reward itself."""
    agent = SacAgent(4, 2, 0.1, SacConfig(discount=0.0), rng=np.random.default_rng(3))
    fill(agent, 512, reward=1.0)
    for _ in range(2000):
        sac_update(agent)
    batch = agent.buffer.sample(256, np.random.default_rng(9))
    x = np.concatenate([batch["obs"], batch["act"]], axis=1)
    for q in (agent.critics.q1, agent.critics.q2):
        assert np.max(np.abs(q.forward(x)[:, 0] - 1.0)) < 0.05


def test_temperature_positive_by_default():
    assert SacConfig().alpha > 0


def test_sac_gradients_pass_finite_differences():
    results = {r.name: r for r in run_gradchecks()}
    for name in ("sac_actor", "sac_critic"):
        assert results[name].passed, results[name]


def transitions(n):
    return [Transition(np.zeros(4), np.zeros(2), np.zeros(4), 7.0, False) for _ in range(n)]


def test_relabel_amortized_conserves_sum():
    trs = transitions(5)
    r = np.array([0.1, 0.4, 0.0, 1.5, 0.5])
    relabel_rewards(trs, r, "amortized", scale=3.0)
    assert sum(t.reward for t in trs) == pytest.approx(3.0 * r.sum())


def test_relabel_final_only_last():
    trs = relabel_rewards(transitions(4), [1.0, 2.0, 3.0, 4.0], "final")
    assert [t.reward for t in trs] == [0.0, 0.0, 0.0, 10.0]


def test_relabel_zero_vector():
    trs = relabel_rewards(transitions(3), np.zeros(3))
    assert all(t.reward == 0.0 for t in trs)


def test_relabel_errors():
    with pytest.raises(ValueError):
        relabel_rewards(transitions(3), np.zeros(2))
    with pytest.raises(ValueError):
        relabel_rewards(transitions(2), np.zeros(2), "sparse")


@pytest.mark.slow
def test_sac_learns_to_leave_origin():
    """A dense reward of distance-from-origin drives the particle outward within 200 episodes.

    The arena corner is 10*sqrt(2) from the spawn, below v_max*T = 50, so the
    bar is half of the reachable maximum.
    """
    cfg = envs.freerun()
    env = ParticleEnv(cfg)
    agent = SacAgent(4, 2, cfg.a_max, SacConfig(), rng=np.random.default_rng(0))
    finals = []
    for _ in range(200):
        obs = env.reset()
        for _ in range(cfg.horizon):
            tr = env.step(agent.act(obs))
            tr.reward = float(np.linalg.norm(tr.next_state[:2]))
            agent.buffer.add(tr.state, tr.action, tr.reward, tr.next_state)
            sac_update(agent)
            obs = tr.next_state
        finals.append(np.linalg.norm(obs[:2]))
    reachable = min(cfg.v_max * cfg.horizon, cfg.half_extent * np.sqrt(2))
    assert np.mean(finals[-20:]) >= 0.5 * reachable
