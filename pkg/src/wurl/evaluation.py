"""Diversity metrics for a set of policies: discriminator success rate and pairwise distances."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .envs import ParticleEnv, Rollout, rollout, trajectory_records
from .nn import Adam, Mlp
from .ot_primal import as_batch, projected_wd
from .seeding import make_rng

EVAL_EPISODES = 10


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_and_grads(net: Mlp, X: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of ``net``'s logits and its parameter gradients."""
    logits = net.forward(X)
    p = softmax(logits)
    n = len(X)
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    grads, _ = net.backward(g / n, input_grad=False)
    return float(loss), grads


def stratified_split(labels: np.ndarray, test_fraction: float, rng: np.random.Generator):
    """Index arrays ``(train, test)`` holding out ``test_fraction`` of every label.

    Labels are visited in order of first appearance, so renaming the labels
    leaves the split unchanged.
    """
    train, test = [], []
    classes, first = np.unique(labels, return_index=True)
    for c in classes[np.argsort(first)]:
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(test_fraction * len(idx)))
        if len(idx) > 1:
            k = min(max(k, 1), len(idx) - 1)
        test.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


class Discriminator:
    """Classifier from a state to the index of the policy that produced it."""

    def __init__(self, dim: int, n_classes: int, hidden=(64, 64), rng=None):
        if n_classes < 2:
            raise ValueError("a discriminator needs at least two classes")
        self.n_classes = n_classes
        self.net = Mlp([dim, *hidden, n_classes], rng=rng)
        self.mean = np.zeros(dim)
        self.std = np.ones(dim)

    def fit_scaler(self, X: np.ndarray) -> None:
        self.mean = X.mean(axis=0)
        self.std = X.std(axis=0)
        self.std[self.std < 1e-8] = 1.0

    def _scale(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def probabilities(self, X) -> np.ndarray:
        return softmax(self.net.forward(self._scale(X)))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.net.forward(self._scale(X)), axis=1)

    def accuracy(self, X, labels) -> float:
        return float(np.mean(self.predict(X) == np.asarray(labels)))


def train_discriminator(states, labels, epochs: int = 30, batch_size: int = 256, lr: float = 1e-3,
                        test_fraction: float = 0.2, hidden=(64, 64), seed: int = 0):
    """Fit a discriminator on a stratified split; returns ``(discriminator, held-out accuracy)``."""
    X = as_batch(states, "states")
    y = np.asarray(labels)
    if y.shape != (len(X),):
        raise ValueError("need exactly one label per state")
    classes, y = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("need at least two distinct labels")
    rng = make_rng(seed, "discriminator")
    train_idx, test_idx = stratified_split(y, test_fraction, rng)
    disc = Discriminator(X.shape[1], len(classes), hidden, rng=rng)
    disc.fit_scaler(X[train_idx])
    Xs = disc._scale(X)
    opt = Adam([disc.net.flat], lr=lr)
    for _ in range(epochs):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), batch_size):
            b = order[start:start + batch_size]
            _, grads = cross_entropy_and_grads(disc.net, Xs[b], y[b])
            opt.step([disc.net.flat], [disc.net.flatten_grads(grads)])
    dsr = disc.accuracy(X[test_idx], y[test_idx])
    return disc, dsr


def labelled_states(archives) -> tuple[np.ndarray, np.ndarray]:
    X = np.concatenate([as_batch(a) for a in archives])
    y = np.concatenate([np.full(len(a), i) for i, a in enumerate(archives)])
    return X, y


@dataclass
class DiversityReport:
    n: int
    dsr: float | None
    wd: float
    matrix: np.ndarray
    samples: list[int] = field(default_factory=list)
    projections: int = 32

    def to_text(self) -> str:
        lines = [f"policies {self.n}",
                 f"dsr {'nan' if self.dsr is None else repr(float(self.dsr))}",
                 f"wd {self.wd!r}",
                 f"projections {self.projections}",
                 "samples " + " ".join(str(s) for s in self.samples),
                 "matrix"]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.matrix]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DiversityReport":
        lines = text.strip().splitlines()
        kv = dict(line.split(" ", 1) if " " in line else (line, "") for line in lines[:5])
        n = int(kv["policies"])
        matrix = np.array([[float(v) for v in row.split()] for row in lines[6:6 + n]]).reshape(n, n)
        dsr = None if kv["dsr"] == "nan" else float(kv["dsr"])
        return cls(n, dsr, float(kv["wd"]), matrix, [int(s) for s in kv["samples"].split()],
                   int(kv["projections"]))


def pairwise_wd_matrix(archives, K: int = 32, seed: int = 0) -> DiversityReport:
    """Projected distances between every two archives.

    Entries ``(i, j)`` and ``(j, i)`` draw their directions from the same
    stream, so the matrix is symmetric up to rounding. The report's WD is the
    mean of the strict upper triangle.
    """
    archives = [as_batch(a, f"archive {i}") for i, a in enumerate(archives)]
    if not archives:
        raise ValueError("need at least one archive")
    dims = {a.shape[1] for a in archives}
    if len(dims) != 1:
        raise ValueError(f"archives have mismatched dimensions {sorted(dims)}")
    n = len(archives)
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                rng = make_rng(seed, "pair", min(i, j), max(i, j))
                W[i, j] = projected_wd(archives[i], archives[j], K, rng)
    upper = W[np.triu_indices(n, k=1)]
    wd = float(upper.mean()) if len(upper) else 0.0
    return DiversityReport(n, None, wd, W, [len(a) for a in archives], K)


def evaluation_archives(policies, env_config, episodes: int = EVAL_EPISODES, seed: int = 0,
                        mask=None) -> list[np.ndarray]:
    """State archives from ``episodes`` rollouts of every policy (``(obs, rng) -> action`` callables)."""
    out = []
    for i, policy in enumerate(policies):
        env = ParticleEnv(env_config, reward_free=True)
        rng = make_rng(seed, "evaluate", i)
        S = np.concatenate([rollout(env, policy, rng=rng).states for _ in range(episodes)])
        out.append(S if mask is None else S[:, mask])
    return out


def diversity_report(archives, K: int = 32, seed: int = 0, discriminator_epochs: int = 30) -> DiversityReport:
    report = pairwise_wd_matrix(archives, K, seed)
    if len(archives) >= 2:
        X, y = labelled_states(archives)
        _, report.dsr = train_discriminator(X, y, epochs=discriminator_epochs, seed=seed)
    return report


def export_trajectories(policies, env_config, episodes: int, out_dir, seed: int = 0) -> list[str]:
    """Write one record file per (policy, episode); returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, policy in enumerate(policies):
        env = ParticleEnv(env_config, reward_free=True)
        rng = make_rng(seed, "export", i)
        for ep in range(episodes):
            ro: Rollout = rollout(env, policy, rng=rng)
            path = os.path.join(os.fspath(out_dir), f"policy{i:02d}_ep{ep:02d}.txt")
            with open(path, "w") as fh:
                fh.write(trajectory_records(ro))
            paths.append(path)
    return paths
