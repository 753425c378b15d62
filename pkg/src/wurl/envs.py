"""2-D particle environments: FreeRun, TreeMaze and ordered-goal navigation.

The agent is a point mass controlled by acceleration. Observations are
``[x, y, vx, vy]``. Walls are line segments with a half-thickness; a point
closer than that to a segment is inside the wall.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable, Sequence

import numpy as np
import yaml

from .errors import ConfigError, StateError

OBS_DIM = 4
ACT_DIM = 2
GOAL_BONUS = 50.0
_MARGIN = 1e-9


@dataclass
class EnvConfig:
    name: str = "freerun"
    half_extent: float = 10.0
    v_max: float = 0.5
    a_max: float = 0.1
    dt: float = 1.0
    horizon: int = 100
    walls: list[tuple[tuple[float, float], tuple[float, float]]] = field(default_factory=list)
    wall_half_thickness: float = 0.6
    goals: list[tuple[float, float]] = field(default_factory=list)
    goal_radius: float = 1.0
    step_penalty: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not (self.a_max > 0 and self.v_max > 0 and self.dt > 0 and self.half_extent > 0):
            raise ConfigError("a_max, v_max, dt and half_extent must be positive")
        if self.walls and self.wall_half_thickness <= self.v_max * self.dt:
            # a single step must not be able to carry the particle across a wall's centerline
            raise ConfigError("wall_half_thickness must exceed v_max * dt")
        for g in self.goals:
            if max(abs(g[0]), abs(g[1])) > self.half_extent:
                raise ConfigError(f"goal {g} outside world bounds")
        if self.goal_radius <= 0:
            raise ConfigError("goal_radius must be positive")

    @property
    def navigation(self) -> bool:
        return bool(self.goals)

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown environment keys: {sorted(unknown)}")
        if "walls" in data:
            data["walls"] = [tuple(tuple(float(c) for c in pt) for pt in seg) for seg in data["walls"]]
        if "goals" in data:
            data["goals"] = [tuple(float(c) for c in g) for g in data["goals"]]
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "half_extent": self.half_extent, "v_max": self.v_max,
            "a_max": self.a_max, "dt": self.dt, "horizon": self.horizon,
            "walls": [[list(p), list(q)] for p, q in self.walls],
            "wall_half_thickness": self.wall_half_thickness,
            "goals": [list(g) for g in self.goals], "goal_radius": self.goal_radius,
            "step_penalty": self.step_penalty,
        }


def load_env_config(source) -> EnvConfig:
    """Read an environment config from a YAML path, a bundled name, or a mapping."""
    if isinstance(source, EnvConfig):
        return source
    if isinstance(source, dict):
        return EnvConfig.from_dict(source)
    text = None
    if os.path.exists(os.fspath(source)):
        with open(source) as fh:
            text = fh.read()
    else:
        bundled = resources.files("wurl") / "configs" / f"{source}.yaml"
        if bundled.is_file():
            text = bundled.read_text()
    if text is None:
        raise ConfigError(f"no environment config at {source!r}")
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"environment config {source!r} is not a mapping")
    return EnvConfig.from_dict(data.get("env", data))


def freerun(**overrides) -> EnvConfig:
    return load_env_config("freerun") if not overrides else replace(load_env_config("freerun"), **overrides)


def treemaze(**overrides) -> EnvConfig:
    return load_env_config("treemaze") if not overrides else replace(load_env_config("treemaze"), **overrides)


def freerun_nav(**overrides) -> EnvConfig:
    return load_env_config("freerun_nav") if not overrides else replace(load_env_config("freerun_nav"), **overrides)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    done: bool
    terminal: bool = False  # true termination (all goals reached), as opposed to the time limit


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    q = a + t * ab
    return float(np.linalg.norm(p - q)), q


class ParticleEnv:
    """Point mass with clamped speed in a square world, optionally with walls and goals."""

    def __init__(self, config: EnvConfig | None = None, reward_free: bool = False):
        self.config = config if config is not None else EnvConfig()
        self.reward_free = reward_free
        self._walls = [(np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64))
                       for p, q in self.config.walls]
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        self.goal_index = 0
        self.done = True
        if self.in_wall(self.pos):
            raise ConfigError("spawn point (0, 0) lies inside a wall")

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def observation(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def reset(self) -> np.ndarray:
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        self.goal_index = 0
        self.done = False
        return self.observation()

    def in_wall(self, pos) -> bool:
        pos = np.asarray(pos, dtype=np.float64)
        w = self.config.wall_half_thickness
        return any(_segment_distance(pos, a, b)[0] < w for a, b in self._walls)

    def in_bounds(self, pos) -> bool:
        return bool(np.all(np.abs(pos) <= self.config.half_extent + 1e-12))

    def _resolve_walls(self, old: np.ndarray, new: np.ndarray, vel: np.ndarray):
        w = self.config.wall_half_thickness
        for _ in range(4):
            hit = False
            for a, b in self._walls:
                dist, q = _segment_distance(new, a, b)
                if dist < w:
                    hit = True
                    normal = (new - q) / dist if dist > 0 else (old - q) / max(np.linalg.norm(old - q), 1e-12)
                    new = q + normal * (w + _MARGIN)
                    vel = vel - min(0.0, float(vel @ normal)) * normal
            if not hit:
                return new, vel
        # overlapping walls (junctions) can push back and forth; stay put instead
        return old.copy(), np.zeros(2)

    def step(self, action) -> Transition:
        if self.done:
            raise StateError("step() called on a finished episode; call reset()")
        cfg = self.config
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(ACT_DIM), -cfg.a_max, cfg.a_max)
        state = self.observation()
        vel = self.vel + a * cfg.dt
        speed = np.linalg.norm(vel)
        if speed > cfg.v_max:
            vel = vel * (cfg.v_max / speed)
        new = self.pos + vel * cfg.dt
        L = cfg.half_extent
        for axis in range(2):
            if abs(new[axis]) > L:
                new[axis] = np.sign(new[axis]) * L
                vel[axis] = 0.0
        if self._walls:
            new, vel = self._resolve_walls(self.pos, new, vel)
        self.pos, self.vel = new, vel
        self.t += 1

        reward = 0.0
        terminal = False
        if cfg.navigation and not self.reward_free:
            reward -= cfg.step_penalty
            goal = np.asarray(cfg.goals[self.goal_index])
            if np.linalg.norm(self.pos - goal) <= cfg.goal_radius:
                reward += GOAL_BONUS
                self.goal_index += 1
                terminal = self.goal_index == len(cfg.goals)
        self.done = terminal or self.t >= cfg.horizon
        return Transition(state, a, self.observation(), reward, self.done, terminal)


Policy = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def zero_policy(obs, rng=None) -> np.ndarray:
    return np.zeros(ACT_DIM)


def random_policy(a_max: float) -> Policy:
    def act(obs, rng):
        return rng.uniform(-a_max, a_max, size=ACT_DIM)
    return act


@dataclass
class Rollout:
    states: np.ndarray  # (T, obs_dim) next-states, the episode's trajectory
    transitions: list[Transition]

    @property
    def total_reward(self) -> float:
        return float(sum(t.reward for t in self.transitions))


def rollout(env: ParticleEnv, policy: Policy, horizon: int | None = None,
            rng: np.random.Generator | None = None) -> Rollout:
    """Run one episode from reset; stops at ``done`` or after ``horizon`` steps."""
    rng = rng if rng is not None else np.random.default_rng(0)
    horizon = env.horizon if horizon is None else horizon
    obs = env.reset()
    transitions = []
    for _ in range(horizon):
        tr = env.step(policy(obs, rng))
        transitions.append(tr)
        obs = tr.next_state
        if tr.done:
            break
    states = np.array([tr.next_state for tr in transitions])
    return Rollout(states, transitions)


def trajectory_records(ro: Rollout) -> str:
    """One line per step: ``step x y vx vy reward``."""
    lines = []
    for i, tr in enumerate(ro.transitions):
        x, y, vx, vy = tr.next_state
        lines.append(" ".join([str(i)] + [repr(float(v)) for v in (x, y, vx, vy, tr.reward)]))
    return "\n".join(lines) + "\n"


def read_trajectory_records(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)
