"""Soft actor-critic for continuous actions with a fixed entropy temperature.

Networks are ``nn.Mlp`` instances with manual gradients, so the loss
functions below return their own parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .nn import Adam, Mlp

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class SacConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 3e-4
    discount: float = 0.99
    tau: float = 0.005
    alpha: float = 0.1
    batch_size: int = 128
    buffer_capacity: int = 100_000

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SacConfig":
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(int(h) for h in data["hidden"])
        return cls(**data)


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminal = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, act, rew, next_obs, terminal=False) -> None:
        i = self.ptr
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.terminal[i] = next_obs, float(terminal)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transitions(self, transitions) -> None:
        for tr in transitions:
            self.add(tr.state, tr.action, tr.reward, tr.next_state, tr.terminal)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray] | None:
        """Uniform minibatch, or ``None`` while fewer than ``batch_size`` transitions are stored."""
        if self.size < batch_size:
            return None
        idx = rng.integers(0, self.size, size=batch_size)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "next_obs": self.next_obs[idx], "terminal": self.terminal[idx]}

    def states(self) -> np.ndarray:
        return self.next_obs[: self.size]


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class Actor:
    """Tanh-squashed Gaussian policy scaled to ``[-a_max, a_max]``."""

    def __init__(self, obs_dim: int, act_dim: int, a_max: float, hidden=(64, 64),
                 rng: np.random.Generator | None = None, init: str = "uniform"):
        self.obs_dim, self.act_dim, self.a_max = obs_dim, act_dim, float(a_max)
        self.net = Mlp([obs_dim, *hidden, 2 * act_dim], rng=rng, init=init)

    def distribution(self, obs) -> tuple[np.ndarray, np.ndarray]:
        out = self.net.forward(obs)
        mean, raw = np.split(out, 2, axis=-1)
        return mean, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)

    def act(self, obs, deterministic: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        mean, log_std = self.distribution(np.asarray(obs, dtype=np.float64))
        if deterministic:
            u = mean
        else:
            if rng is None:
                raise ValueError("stochastic actions need an rng")
            u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return self.a_max * np.tanh(u)

    def policy(self, deterministic: bool = False):
        """Adapter to the ``(obs, rng) -> action`` callable used by rollouts."""
        return lambda obs, rng: self.act(obs, deterministic, rng)

    def sample_with_log_prob(self, obs: np.ndarray, eps: np.ndarray):
        mean, log_std = self.distribution(obs)
        u = mean + np.exp(log_std) * eps
        logp = np.sum(-0.5 * eps ** 2 - log_std - _HALF_LOG_2PI - np.log(self.a_max) - _log1m_tanh2(u), axis=1)
        return self.a_max * np.tanh(u), logp


def act(actor: Actor, s, deterministic: bool = False, rng=None) -> np.ndarray:
    return actor.act(s, deterministic, rng)


class CriticPair:
    """Twin Q-networks with Polyak-averaged target copies."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), rng=None, tau: float = 0.005):
        sizes = [obs_dim + act_dim, *hidden, 1]
        self.q1 = Mlp(sizes, rng=rng)
        self.q2 = Mlp(sizes, rng=rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.tau = tau

    def soft_update(self, tau: float | None = None) -> None:
        tau = self.tau if tau is None else tau
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            target.flat *= 1.0 - tau
            target.flat += tau * online.flat


def critic_loss_and_grads(q1: Mlp, q2: Mlp, obs, act, target):
    """Sum of the two halved mean-squared Bellman errors against a fixed target."""
    x = np.concatenate([obs, act], axis=1)
    B = len(obs)
    losses, grads = [], []
    for q in (q1, q2):
        err = q.forward(x)[:, 0] - target
        losses.append(0.5 * np.mean(err ** 2))
        grads.append(q.backward((err / B)[:, None], input_grad=False)[0])
    return float(losses[0] + losses[1]), grads[0], grads[1]


def soft_targets(actor: Actor, critics: CriticPair, batch: dict, eps: np.ndarray,
                 discount: float, alpha: float) -> np.ndarray:
    a_next, logp_next = actor.sample_with_log_prob(batch["next_obs"], eps)
    x = np.concatenate([batch["next_obs"], a_next], axis=1)
    q_next = np.minimum(critics.q1_target.forward(x)[:, 0], critics.q2_target.forward(x)[:, 0])
    return batch["rew"] + discount * (1.0 - batch["terminal"]) * (q_next - alpha * logp_next)


def actor_loss_and_grads(actor: Actor, q1: Mlp, q2: Mlp, obs: np.ndarray, eps: np.ndarray, alpha: float):
    """``mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))`` with reparameterized ``a``.

    Returns the loss, the actor parameter gradients and the batch entropy
    estimate ``-mean(log pi)``.
    """
    B, A = eps.shape
    out = actor.net.forward(obs)
    mean, raw = out[:, :A], out[:, A:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mean + std * eps
    t = np.tanh(u)
    a = actor.a_max * t
    logp = np.sum(-0.5 * eps ** 2 - log_std - _HALF_LOG_2PI - np.log(actor.a_max) - _log1m_tanh2(u), axis=1)

    x = np.concatenate([obs, a], axis=1)
    v1 = q1.forward(x)[:, 0]
    v2 = q2.forward(x)[:, 0]
    pick1 = v1 <= v2
    loss = np.mean(alpha * logp - np.where(pick1, v1, v2))

    _, gin1 = q1.backward((pick1 / B)[:, None], param_grads=False)
    _, gin2 = q2.backward((~pick1 / B)[:, None], param_grads=False)
    dq_da = (gin1 + gin2)[:, actor.obs_dim:]
    d_u = (alpha / B) * 2.0 * t - dq_da * actor.a_max * (1.0 - t * t)
    d_log_std = -alpha / B + d_u * std * eps
    d_raw = d_log_std * ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX))
    grads, _ = actor.net.backward(np.concatenate([d_u, d_raw], axis=1), input_grad=False)
    return float(loss), grads, float(-logp.mean())


class SacAgent:
    """One policy with its critics, optimizers and replay buffer."""

    def __init__(self, obs_dim: int, act_dim: int, a_max: float, config: SacConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config or SacConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        cfg = self.config
        self.actor = Actor(obs_dim, act_dim, a_max, cfg.hidden, rng=self.rng)
        self.critics = CriticPair(obs_dim, act_dim, cfg.hidden, rng=self.rng, tau=cfg.tau)
        self.actor_opt = Adam([self.actor.net.flat], lr=cfg.lr)
        self.q1_opt = Adam([self.critics.q1.flat], lr=cfg.lr)
        self.q2_opt = Adam([self.critics.q2.flat], lr=cfg.lr)
        self.buffer = ReplayBuffer(obs_dim, act_dim, cfg.buffer_capacity)

    def act(self, obs, deterministic: bool = False) -> np.ndarray:
        return self.actor.act(obs, deterministic, self.rng)

    def networks(self) -> dict[str, Mlp]:
        c = self.critics
        return {"actor": self.actor.net, "q1": c.q1, "q2": c.q2,
                "q1_target": c.q1_target, "q2_target": c.q2_target}

    def update(self) -> dict[str, float] | None:
        return sac_update(self)


def sac_update(agent: SacAgent, batch_size: int | None = None, discount: float | None = None,
               alpha: float | None = None, tau: float | None = None) -> dict[str, float] | None:
    """One critic step, one actor step and one soft target update.

    Returns ``None`` without touching any parameters when the buffer holds
    fewer than ``batch_size`` transitions.
    """
    cfg = agent.config
    batch_size = cfg.batch_size if batch_size is None else batch_size
    discount = cfg.discount if discount is None else discount
    alpha = cfg.alpha if alpha is None else alpha
    tau = cfg.tau if tau is None else tau
    batch = agent.buffer.sample(batch_size, agent.rng)
    if batch is None:
        return None
    c = agent.critics
    act_dim = agent.actor.act_dim

    eps_next = agent.rng.standard_normal((batch_size, act_dim))
    target = soft_targets(agent.actor, c, batch, eps_next, discount, alpha)
    critic_loss, g1, g2 = critic_loss_and_grads(c.q1, c.q2, batch["obs"], batch["act"], target)
    agent.q1_opt.step([c.q1.flat], [c.q1.flatten_grads(g1)])
    agent.q2_opt.step([c.q2.flat], [c.q2.flatten_grads(g2)])

    eps = agent.rng.standard_normal((batch_size, act_dim))
    actor_loss, ga, entropy = actor_loss_and_grads(agent.actor, c.q1, c.q2, batch["obs"], eps, alpha)
    agent.actor_opt.step([agent.actor.net.flat], [agent.actor.net.flatten_grads(ga)])

    c.soft_update(tau)
    return {"critic_loss": critic_loss, "actor_loss": actor_loss, "entropy": entropy}


def relabel_rewards(transitions, rewards, mode: str = "amortized", scale: float = 1.0):
    """Overwrite the rewards of one episode's transitions (in place, also returned).

    ``amortized``: step i gets ``scale * rewards[i]``.
    ``final``: every step gets 0 except the last, which gets ``sum(rewards)``.
    """
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if len(transitions) != r.size:
        raise ValueError(f"{len(transitions)} transitions but {r.size} rewards")
    if mode == "amortized":
        for tr, ri in zip(transitions, r):
            tr.reward = float(scale * ri)
    elif mode == "final":
        for tr in transitions:
            tr.reward = 0.0
        if transitions:
            transitions[-1].reward = float(r.sum())
    else:
        raise ValueError(f"unknown relabel mode {mode!r}")
    return transitions
