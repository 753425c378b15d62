"""Training loops that push a set of policies apart in state-distribution space.

Reward modes:

* ``tf1`` / ``tf2``: two policies share a neural test function; every step is
  rewarded with the test function's score of the reached state.
* ``pwd``: a single reward at the end of each episode, the projected
  Wasserstein distance from the episode's states to the nearest other policy.
* ``apwd``: the same distance split into one credit per step through the
  projected couplings, scaled by the episode length.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from . import ot_dual
from .envs import ACT_DIM, OBS_DIM, EnvConfig, ParticleEnv, Rollout, rollout
from .errors import CheckpointError
from .nn import load_checkpoint, param_hash, save_checkpoint
from .ot_primal import amortized_rewards, projected_wd, sample_directions
from .sac import SacAgent, SacConfig, relabel_rewards, sac_update
from .seeding import make_rng

log = logging.getLogger(__name__)

MODES = ("tf1", "tf2", "pwd", "apwd")
AGGREGATES = ("min", "mean")


@dataclass
class TrainConfig:
    mode: str = "apwd"
    n_policies: int = 10
    episodes: int = 500  # total over all policies
    projections: int = 16
    target_batch: int = 256
    target_window: int = 10  # recent episodes per policy that targets are drawn from
    aggregate: str = "min"
    selection: str = "round_robin"
    state_mask: list[int] | None = None
    scale_by_length: bool = True
    update_ratio: float = 1.0  # SAC updates per environment step
    archive_episodes: int = 10  # deterministic episodes recorded when a policy is frozen
    tf_lr: float = 1e-3
    tf_beta: float = 1.0
    tf_clamp: float = 0.01
    tf_batch: int = 128
    sac: SacConfig = field(default_factory=SacConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.aggregate not in AGGREGATES:
            raise ValueError(f"aggregate must be one of {AGGREGATES}")
        if self.selection not in ("round_robin", "random"):
            raise ValueError("selection must be 'round_robin' or 'random'")
        if self.mode in ("tf1", "tf2") and self.n_policies != 2:
            raise ValueError("test-function modes train exactly two policies")
        if not 0 < self.update_ratio <= 4:
            raise ValueError("update_ratio must lie in (0, 4]")
        if self.n_policies < 1 or self.projections < 1 or self.target_batch < 1:
            raise ValueError("n_policies, projections and target_batch must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sac"] = self.sac.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "sac" in data:
            data["sac"] = SacConfig.from_dict(data["sac"])
        return cls(**data)


class PolicySet:
    """Policies, their replay buffers, and the per-policy state archives used as targets."""

    def __init__(self, n: int, env_config: EnvConfig, config: TrainConfig, seed: int = 0):
        if n < 1:
            raise ValueError("need at least one policy")
        self.env_config = env_config
        self.config = config
        self.seed = int(seed)
        self.agents: list[SacAgent] = []
        self.frozen: list[bool] = []
        self.archives: list[deque] = []
        self.tf: ot_dual.TestFunctionPair | None = None
        for _ in range(n):
            self.add_policy()
        if config.mode in ("tf1", "tf2"):
            self.tf = ot_dual.TestFunctionPair(
                self.feature_dim, config.mode, hidden=config.sac.hidden, clamp_c=config.tf_clamp,
                beta=config.tf_beta, lr=config.tf_lr, rng=make_rng(seed, "test-function"))

    def __len__(self) -> int:
        return len(self.agents)

    @property
    def feature_dim(self) -> int:
        return OBS_DIM if self.config.state_mask is None else len(self.config.state_mask)

    def features(self, states: np.ndarray) -> np.ndarray:
        mask = self.config.state_mask
        return states if mask is None else states[:, mask]

    def add_policy(self) -> int:
        i = len(self.agents)
        self.agents.append(SacAgent(OBS_DIM, ACT_DIM, self.env_config.a_max, self.config.sac,
                                    rng=make_rng(self.seed, "agent", i)))
        self.frozen.append(False)
        self.archives.append(deque(maxlen=self.config.target_window))
        return i

    def freeze(self, i: int, archive: list[np.ndarray] | None = None) -> None:
        """Stop training policy ``i`` and pin its archive to a fixed set of episodes."""
        if archive is None:
            env = ParticleEnv(self.env_config, reward_free=True)
            rng = make_rng(self.seed, "freeze", i)
            policy = self.agents[i].actor.policy(deterministic=True)
            archive = [rollout(env, policy, rng=rng).states for _ in range(self.config.archive_episodes)]
        if not archive or any(len(ep) == 0 for ep in archive):
            raise ValueError(f"policy {i} needs a non-empty archive to be frozen")
        self.frozen[i] = True
        self.archives[i] = deque(archive)

    def archive_states(self, i: int) -> np.ndarray:
        return np.concatenate(list(self.archives[i])) if self.archives[i] else np.zeros((0, OBS_DIM))

    def hashes(self) -> list[str]:
        return [param_hash(*a.networks().values()) for a in self.agents]


class TargetSampler:
    """Draws target batches from other policies' archives and records every draw."""

    def __init__(self, pset: PolicySet, batch_size: int, rng: np.random.Generator):
        self.pset = pset
        self.batch_size = batch_size
        self.rng = rng
        self.draws: list[tuple[int, int]] = []

    def sample(self, acting: int, source: int) -> np.ndarray:
        if acting == source:
            raise ValueError("a policy never targets its own buffer")
        states = self.pset.archive_states(source)
        if len(states) == 0:
            raise ValueError(f"policy {source} has an empty archive")
        self.draws.append((acting, source))
        idx = self.rng.integers(0, len(states), size=self.batch_size)
        return states[idx]

    def targets_for(self, acting: int) -> dict[int, np.ndarray]:
        return {j: self.sample(acting, j) for j in range(len(self.pset))
                if j != acting and self.pset.archives[j]}


def episode_rewards(S: np.ndarray, targets: dict[int, np.ndarray], mode: str, projections: int,
                    rng: np.random.Generator, aggregate: str = "min", scale_by_length: bool = True):
    """Per-step rewards for one episode's state features ``S``.

    Returns ``(rewards, distance, nearest, distances)``. With no targets
    available every reward is 0. Directions are sampled once and shared by
    every target, so ``distances`` are comparable and the amortized credits
    of the chosen target sum exactly to its distance.
    """
    n = len(S)
    if not targets:
        return np.zeros(n), 0.0, None, {}
    v = sample_directions(S.shape[1], projections, rng)
    distances = {j: projected_wd(S, T, directions=v) for j, T in targets.items()}
    nearest = min(distances, key=lambda j: (distances[j], j))
    if aggregate == "min":
        distance = distances[nearest]
        credits = amortized_rewards(S, targets[nearest], directions=v)
    else:
        distance = float(np.mean(list(distances.values())))
        credits = np.mean([amortized_rewards(S, T, directions=v) for T in targets.values()], axis=0)
    if mode == "apwd":
        rewards = credits * (n if scale_by_length else 1.0)
    elif mode == "pwd":
        rewards = np.zeros(n)
        rewards[-1] = distance
    else:
        raise ValueError(f"episode_rewards handles pwd/apwd, not {mode!r}")
    return rewards, distance, nearest, distances


class Trainer:
    """Runs training episodes for a ``PolicySet`` and keeps a metrics log."""

    def __init__(self, pset: PolicySet, stream: tuple = (),
                 on_record: Callable[[dict], None] | None = None):
        self.pset = pset
        cfg = pset.config
        self.stream = tuple(stream)
        self.env = ParticleEnv(pset.env_config, reward_free=True)
        self.sampler = TargetSampler(pset, cfg.target_batch, self._rng("targets"))
        self.direction_rng = self._rng("directions")
        self.select_rng = self._rng("selection")
        self.rollout_rngs = [self._rng("rollout", i) for i in range(len(pset))]
        self.episode = 0
        self._turn = 0
        self._owed: dict[int, float] = {}
        self.records: list[dict] = []
        self.on_record = on_record

    def _rng(self, *keys) -> np.random.Generator:
        return make_rng(self.pset.seed, *self.stream, *keys)

    def _rollout_rng(self, i: int) -> np.random.Generator:
        while len(self.rollout_rngs) <= i:
            self.rollout_rngs.append(self._rng("rollout", len(self.rollout_rngs)))
        return self.rollout_rngs[i]

    def _updates(self, i: int, steps: int) -> int:
        # fractional ratios carry their remainder between episodes
        owed = self._owed.get(i, 0.0) + steps * self.pset.config.update_ratio
        n = int(owed)
        self._owed[i] = owed - n
        return n

    def select(self) -> int:
        live = [i for i, f in enumerate(self.pset.frozen) if not f]
        if not live:
            raise ValueError("every policy is frozen")
        if self.pset.config.selection == "random":
            return int(live[self.select_rng.integers(len(live))])
        i = live[self._turn % len(live)]
        self._turn += 1
        return i

    def _record(self, rec: dict) -> None:
        self.records.append(rec)
        if self.on_record is not None:
            self.on_record(rec)

    def run(self, episodes: int) -> list[dict]:
        start = len(self.records)
        for _ in range(episodes):
            if self.pset.config.mode in ("tf1", "tf2"):
                self.testfn_episode(self.select())
            else:
                self.primal_episode(self.select())
        return self.records[start:]

    def primal_episode(self, i: int) -> dict:
        """Roll out policy ``i``, reward the episode against the other archives, then train."""
        pset, cfg = self.pset, self.pset.config
        agent = pset.agents[i]
        ro = rollout(self.env, agent.actor.policy(), rng=self._rollout_rng(i))
        S = pset.features(ro.states)
        targets = {j: pset.features(T) for j, T in self.sampler.targets_for(i).items()}
        rewards, distance, nearest, _ = episode_rewards(
            S, targets, cfg.mode, cfg.projections, self.direction_rng, cfg.aggregate, cfg.scale_by_length)
        if not targets:
            log.info("episode %d: policy %d has no targets yet, zero reward", self.episode, i)
        relabel_rewards(ro.transitions, rewards, mode="amortized")
        agent.buffer.add_transitions(ro.transitions)
        for _ in range(self._updates(i, len(ro.transitions))):
            sac_update(agent)
        pset.archives[i].append(ro.states)
        rec = {"episode": self.episode, "policy": i, "intrinsic_return": float(rewards.sum()),
               "min_pairwise_wd": float(distance), "target": nearest}
        self.episode += 1
        self._record(rec)
        return rec

    def testfn_episode(self, i: int) -> dict:
        """One episode with per-step test-function rewards, updating the scorers every step."""
        pset, cfg = self.pset, self.pset.config
        tf = pset.tf
        agent = pset.agents[i]
        side = "first" if i == 0 else "second"
        rng = self._rollout_rng(i)
        obs = self.env.reset()
        states, total = [], 0.0
        while True:
            tr = self.env.step(agent.act(obs))
            tr.reward = ot_dual.state_reward(tf, pset.features(tr.next_state[None, :]), side)[0]
            total += tr.reward
            agent.buffer.add_transitions([tr])
            sac_update(agent)
            X, Y = (pset.agents[k].buffer.states() for k in (0, 1))
            if len(X) and len(Y):
                ix = rng.integers(0, len(X), size=min(cfg.tf_batch, len(X)))
                iy = rng.integers(0, len(Y), size=min(cfg.tf_batch, len(Y)))
                ot_dual.update(tf, pset.features(X[ix]), pset.features(Y[iy]))
            states.append(tr.next_state)
            obs = tr.next_state
            if tr.done:
                break
        states = np.array(states)
        other = 1 - i
        distance = 0.0
        if pset.archives[other]:
            T = pset.features(self.sampler.sample(i, other))
            distance = projected_wd(pset.features(states), T, cfg.projections, self.direction_rng)
        pset.archives[i].append(states)
        rec = {"episode": self.episode, "policy": i, "intrinsic_return": float(total),
               "min_pairwise_wd": float(distance), "target": other}
        self.episode += 1
        self._record(rec)
        return rec


def _require_mode(pset: PolicySet, allowed: tuple[str, ...]) -> None:
    if pset.config.mode not in allowed:
        raise ValueError(f"policy set mode {pset.config.mode!r} not in {allowed}")


def train_pair_testfn(pset: PolicySet, episodes: int, trainer: Trainer | None = None) -> list[dict]:
    if len(pset) != 2:
        raise ValueError("test-function training needs exactly two policies")
    _require_mode(pset, ("tf1", "tf2"))
    return (trainer or Trainer(pset)).run(episodes)


def train_final_reward(pset: PolicySet, episodes: int, trainer: Trainer | None = None) -> list[dict]:
    _require_mode(pset, ("pwd",))
    return (trainer or Trainer(pset)).run(episodes)


def train_amortized(pset: PolicySet, episodes: int, trainer: Trainer | None = None) -> list[dict]:
    _require_mode(pset, ("apwd",))
    return (trainer or Trainer(pset)).run(episodes)


def train_incremental(pset: PolicySet, episodes: int, on_record=None) -> tuple[PolicySet, list[dict]]:
    """Add one policy to a set of frozen policies and train it with APWD rewards against them.

    The frozen policies are left bit-identical. The new policy is frozen at
    the end so the set can be grown again.
    """
    if len(pset) < 1 or not all(pset.frozen):
        raise ValueError("incremental training needs n >= 1 policies, all frozen")
    if any(len(a) == 0 for a in pset.archives):
        raise ValueError("every frozen policy needs a non-empty state archive")
    _require_mode(pset, ("apwd",))
    before = pset.hashes()
    i = pset.add_policy()
    trainer = Trainer(pset, stream=("stage", i), on_record=on_record)
    records = trainer.run(episodes)
    for rec in records:
        rec["stage"] = i
    if pset.hashes()[:i] != before:
        raise AssertionError("a frozen policy changed during incremental training")
    pset.freeze(i)
    return pset, records


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def save_training_state(path, trainer: Trainer) -> None:
    """Checkpoint everything needed to continue ``trainer`` exactly where it stopped."""
    pset = trainer.pset
    nets, arrays = {}, {}
    for i, agent in enumerate(pset.agents):
        for name, net in agent.networks().items():
            nets[f"agent{i}/{name}"] = net
        for name, opt in (("actor", agent.actor_opt), ("q1", agent.q1_opt), ("q2", agent.q2_opt)):
            for key, arr in opt.state_arrays().items():
                arrays[f"agent{i}/opt/{name}/{key}"] = arr
        buf = agent.buffer
        for key in ("obs", "act", "rew", "next_obs", "terminal"):
            arrays[f"agent{i}/buffer/{key}"] = getattr(buf, key)[:buf.size]
        for k, ep in enumerate(pset.archives[i]):
            arrays[f"agent{i}/archive/{k}"] = ep
    if pset.tf is not None:
        for name, net in pset.tf.networks().items():
            nets[f"tf/{name}"] = net
        for name, opt in (("mu", pset.tf.opt_mu), ("nu", pset.tf.opt_nu)):
            if opt is not None:
                for key, arr in opt.state_arrays().items():
                    arrays[f"tf/opt/{name}/{key}"] = arr
    meta = {
        "config": pset.config.to_dict(),
        "env": pset.env_config.to_dict(),
        "seed": pset.seed,
        "n_policies": len(pset),
        "frozen": pset.frozen,
        "archive_sizes": [len(a) for a in pset.archives],
        "buffer_ptr": [a.buffer.ptr for a in pset.agents],
        "episode": trainer.episode,
        "turn": trainer._turn,
        "stream": list(trainer.stream),
        "owed": {str(k): v for k, v in trainer._owed.items()},
        "rng": {
            "agents": [_rng_state(a.rng) for a in pset.agents],
            "rollout": [_rng_state(r) for r in trainer.rollout_rngs],
            "targets": _rng_state(trainer.sampler.rng),
            "directions": _rng_state(trainer.direction_rng),
            "selection": _rng_state(trainer.select_rng),
            "tf": _rng_state(pset.tf.rng) if pset.tf is not None else None,
        },
        "records": trainer.records,
    }
    save_checkpoint(path, nets, arrays, meta)


def load_training_state(path) -> Trainer:
    """Rebuild a ``Trainer`` (and its ``PolicySet``) from ``save_training_state`` output."""
    from .envs import EnvConfig

    nets, arrays, meta = load_checkpoint(path)
    try:
        config = TrainConfig.from_dict(meta["config"])
        pset = PolicySet(meta["n_policies"], EnvConfig.from_dict(meta["env"]), config, seed=meta["seed"])
        trainer = Trainer(pset, stream=tuple(meta["stream"]))
        for i, agent in enumerate(pset.agents):
            for name, net in agent.networks().items():
                net.load_from(nets[f"agent{i}/{name}"])
            for name, opt in (("actor", agent.actor_opt), ("q1", agent.q1_opt), ("q2", agent.q2_opt)):
                prefix = f"agent{i}/opt/{name}/"
                opt.load_state_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
            buf = agent.buffer
            size = len(arrays[f"agent{i}/buffer/rew"])
            for key in ("obs", "act", "rew", "next_obs", "terminal"):
                getattr(buf, key)[:size] = arrays[f"agent{i}/buffer/{key}"]
            buf.size, buf.ptr = size, meta["buffer_ptr"][i]
            pset.archives[i].clear()
            pset.archives[i].extend(arrays[f"agent{i}/archive/{k}"] for k in range(meta["archive_sizes"][i]))
            _set_rng_state(agent.rng, meta["rng"]["agents"][i])
        pset.frozen = list(meta["frozen"])
        if pset.tf is not None:
            for name, net in pset.tf.networks().items():
                net.load_from(nets[f"tf/{name}"])
            for name, opt in (("mu", pset.tf.opt_mu), ("nu", pset.tf.opt_nu)):
                if opt is not None:
                    prefix = f"tf/opt/{name}/"
                    opt.load_state_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
            _set_rng_state(pset.tf.rng, meta["rng"]["tf"])
        trainer.episode = meta["episode"]
        trainer._turn = meta["turn"]
        trainer._owed = {int(k): v for k, v in meta["owed"].items()}
        for r, state in zip(trainer.rollout_rngs, meta["rng"]["rollout"]):
            _set_rng_state(r, state)
        _set_rng_state(trainer.sampler.rng, meta["rng"]["targets"])
        _set_rng_state(trainer.direction_rng, meta["rng"]["directions"])
        _set_rng_state(trainer.select_rng, meta["rng"]["selection"])
        trainer.records = list(meta["records"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: incomplete training state ({exc})") from exc
    return trainer
