"""Hierarchical control on top of frozen skills.

A meta-policy looks at the base state every ``H`` steps, picks one frozen
sub-policy, and runs it for up to ``H`` base steps. It is trained with a
clipped-ratio policy gradient (PPO) and generalized advantage estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .envs import OBS_DIM, ParticleEnv
from .errors import StateError
from .evaluation import softmax
from .nn import Adam, Mlp
from .seeding import make_rng


class MetaEnv:
    """Turns a base environment plus ``N`` sub-policies into an ``N``-action environment."""

    def __init__(self, env: ParticleEnv, sub_policies, H: int = 10, rng=None):
        if H < 1:
            raise ValueError("macro horizon H must be >= 1")
        if not sub_policies:
            raise ValueError("need at least one sub-policy")
        self.env = env
        self.sub_policies = list(sub_policies)
        self.H = int(H)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.obs: np.ndarray | None = None
        self.terminal = False  # last macro step ended the task (not the time limit)

    @property
    def n_actions(self) -> int:
        return len(self.sub_policies)

    def reset(self) -> np.ndarray:
        self.obs = self.env.reset()
        self.terminal = False
        return self.obs

    def meta_step(self, choice: int):
        """Run sub-policy ``choice`` for up to ``H`` steps; returns ``(obs, summed reward, done)``."""
        if not (isinstance(choice, (int, np.integer)) and 0 <= choice < self.n_actions):
            raise ValueError(f"sub-policy index must be in [0, {self.n_actions}), got {choice!r}")
        if self.obs is None or self.env.done:
            raise StateError("meta_step() needs an active episode; call reset()")
        policy = self.sub_policies[int(choice)]
        total, done = 0.0, False
        for _ in range(self.H):
            tr = self.env.step(policy(self.obs, self.rng))
            total += tr.reward
            self.obs = tr.next_state
            done, self.terminal = tr.done, tr.terminal
            if done:
                break
        return self.obs, total, done


@dataclass
class PpoConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 3e-4
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    epochs: int = 8
    minibatch: int = 64
    episodes_per_iter: int = 8
    reward_scale: float = 0.02  # value net fits scaled returns

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip ratio must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PpoConfig":
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(int(h) for h in data["hidden"])
        return cls(**data)


class MetaPolicy:
    """Categorical policy over sub-policy indices plus a state-value network."""

    def __init__(self, n_actions: int, obs_dim: int = OBS_DIM, config: PpoConfig | None = None,
                 obs_scale=None, rng=None):
        if n_actions < 1:
            raise ValueError("need at least one action")
        self.config = config or PpoConfig()
        self.n_actions = n_actions
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_scale = np.ones(obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=np.float64)
        self.pi = Mlp([obs_dim, *self.config.hidden, n_actions], rng=self.rng)
        self.pi.params[-2][...] *= 0.01  # start close to uniform
        self.pi.params[-1][...] = 0.0
        self.value = Mlp([obs_dim, *self.config.hidden, 1], rng=self.rng)
        self.pi_opt = Adam([self.pi.flat], lr=self.config.lr)
        self.v_opt = Adam([self.value.flat], lr=self.config.lr)

    def features(self, obs) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64) / self.obs_scale

    def probabilities(self, obs) -> np.ndarray:
        x = self.features(obs)
        return softmax(self.pi.forward(np.atleast_2d(x)))

    def act(self, obs, greedy: bool = False) -> tuple[int, float]:
        p = self.probabilities(obs)[0]
        a = int(np.argmax(p)) if greedy else int(self.rng.choice(self.n_actions, p=p))
        return a, float(np.log(p[a] + 1e-300))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def ppo_policy_loss_and_grads(net: Mlp, x: np.ndarray, actions: np.ndarray, old_logp: np.ndarray,
                              adv: np.ndarray, clip: float, entropy_coef: float = 0.0):
    """Clipped surrogate loss (to minimize) with an entropy bonus, and its gradients."""
    n = len(x)
    logits = net.forward(x)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    idx = np.arange(n)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - clip, 1 + clip) * adv
    entropy = -(p * logp_all).sum(axis=1)
    loss = -np.mean(np.minimum(unclipped, clipped)) - entropy_coef * entropy.mean()
    # the unclipped branch carries gradient whenever it is the active minimum
    active = unclipped <= clipped
    d_logp = np.where(active, -ratio * adv, 0.0) / n
    onehot = np.zeros_like(p)
    onehot[idx, actions] = 1.0
    g = d_logp[:, None] * (onehot - p)
    g += entropy_coef / n * p * (logp_all + entropy[:, None])
    grads, _ = net.backward(g, input_grad=False)
    return float(loss), grads


def value_loss_and_grads(net: Mlp, x: np.ndarray, targets: np.ndarray):
    v = net.forward(x)[:, 0]
    diff = v - targets
    loss = 0.5 * np.mean(diff ** 2)
    grads, _ = net.backward((diff / len(x))[:, None], input_grad=False)
    return float(loss), grads


def gae(rewards, values, dones, last_value: float, discount: float, lam: float):
    """Generalized advantage estimates and returns for one macro-episode."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = len(rewards)
    adv = np.zeros(n)
    next_value, running = last_value, 0.0
    for t in reversed(range(n)):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + discount * next_value * nonterminal - values[t]
        running = delta + discount * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


@dataclass
class MacroEpisode:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray  # true task termination, not the time limit
    last_obs: np.ndarray
    timed_out: bool

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def run_macro_episode(menv: MetaEnv, choose) -> MacroEpisode:
    """Roll out one base episode with ``choose(obs) -> (action, logp)`` deciding every macro step."""
    obs = menv.reset()
    O, A, L, R, D = [], [], [], [], []
    done = False
    while not done:
        a, lp = choose(obs)
        O.append(obs)
        A.append(a)
        L.append(lp)
        obs, r, done = menv.meta_step(a)
        R.append(r)
        D.append(menv.terminal)
    timed_out = not D[-1]
    return MacroEpisode(np.array(O), np.array(A), np.array(L), np.array(R), np.array(D),
                        obs.copy(), timed_out)


def random_meta_returns(menv: MetaEnv, episodes: int, rng) -> np.ndarray:
    """Returns of a meta-policy that picks sub-policies uniformly at random."""
    def choose(obs):
        return int(rng.integers(menv.n_actions)), float(-np.log(menv.n_actions))
    return np.array([run_macro_episode(menv, choose).total_reward for _ in range(episodes)])


def evaluate_meta(policy: MetaPolicy, menv: MetaEnv, episodes: int, greedy: bool = True) -> np.ndarray:
    return np.array([run_macro_episode(menv, lambda o: policy.act(o, greedy)).total_reward
                     for _ in range(episodes)])


def ppo_update(policy: MetaPolicy, episodes: list[MacroEpisode]) -> dict[str, float]:
    cfg = policy.config
    X, A, LP, ADV, RET = [], [], [], [], []
    for ep in episodes:
        x = policy.features(ep.obs)
        values = policy.value.forward(x)[:, 0] / cfg.reward_scale
        last = 0.0
        if ep.timed_out:
            # the time limit is not a task outcome: bootstrap from the final state
            last = float(policy.value.forward(policy.features(ep.last_obs)[None, :])[0, 0]) / cfg.reward_scale
        adv, ret = gae(ep.rewards, values, ep.terminal, last, cfg.discount, cfg.gae_lambda)
        X.append(x)
        A.append(ep.actions)
        LP.append(ep.logp)
        ADV.append(adv)
        RET.append(ret)
    X, A, LP, ADV, RET = (np.concatenate(v) for v in (X, A, LP, ADV, RET))
    ADV = (ADV - ADV.mean()) / (ADV.std() + 1e-8)
    targets = RET * cfg.reward_scale
    n = len(X)
    pl = vl = 0.0
    for _ in range(cfg.epochs):
        order = policy.rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            b = order[start:start + cfg.minibatch]
            pl, gp = ppo_policy_loss_and_grads(policy.pi, X[b], A[b], LP[b], ADV[b], cfg.clip, cfg.entropy_coef)
            policy.pi_opt.step([policy.pi.flat], [policy.pi.flatten_grads(gp)])
            vl, gv = value_loss_and_grads(policy.value, X[b], targets[b])
            policy.v_opt.step([policy.value.flat], [cfg.value_coef * policy.value.flatten_grads(gv)])
    return {"policy_loss": pl, "value_loss": vl}


def meta_train(policy: MetaPolicy, menv: MetaEnv, iterations: int, on_record=None) -> list[dict]:
    """PPO on macro-episodes; returns one ``(iteration, mean_return, std_return)`` record per iteration."""
    curve = []
    for it in range(iterations):
        eps = [run_macro_episode(menv, policy.act) for _ in range(policy.config.episodes_per_iter)]
        returns = np.array([e.total_reward for e in eps])
        ppo_update(policy, eps)
        rec = {"iteration": it, "mean_return": float(returns.mean()), "std_return": float(returns.std())}
        curve.append(rec)
        if on_record is not None:
            on_record(rec)
    return curve


def build_meta(env_config, sub_policies, H: int = 10, config: PpoConfig | None = None, seed: int = 0):
    """A ``MetaEnv``/``MetaPolicy`` pair with seeded streams and observations scaled to unit range."""
    env = ParticleEnv(env_config)
    menv = MetaEnv(env, sub_policies, H, rng=make_rng(seed, "meta-env"))
    scale = [env_config.half_extent] * 2 + [env_config.v_max] * 2
    policy = MetaPolicy(len(sub_policies), OBS_DIM, config, obs_scale=scale, rng=make_rng(seed, "meta-policy"))
    return menv, policy
