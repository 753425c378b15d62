"""Dual-form Wasserstein estimators driven by neural test functions.

TF1 keeps a single scorer ``f`` whose weights are clamped to a box (a crude
Lipschitz bound) and maximizes ``mean f(X) - mean f(Y)``. TF2 keeps two free
scorers ``mu``/``nu`` and maximizes the smoothed dual

    E[ mu(x) - nu(y) - beta * exp((mu(x) - nu(y) - c(x, y)) / beta) ]

over random (x, y) pairs.
"""

from __future__ import annotations

import numpy as np

from .nn import Adam, Mlp
from .ot_primal import as_batch

MODES = ("tf1", "tf2")
SIDES = ("first", "second")


class TestFunctionPair:
    """Scorer networks plus their optimizers; ``nu`` is ``None`` in TF1 mode."""

    __test__ = False  # not a pytest class

    def __init__(self, dim: int, mode: str = "tf1", hidden=(64, 64), clamp_c: float = 0.01,
                 beta: float = 1.0, exp_cap: float = 20.0, lr: float = 1e-3,
                 rng: np.random.Generator | None = None, init: str = "uniform"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "tf1" and not clamp_c > 0:
            raise ValueError("clamp_c must be positive")
        if mode == "tf2" and not beta > 0:
            raise ValueError("beta must be positive")
        self.mode = mode
        self.dim = int(dim)
        self.clamp_c = float(clamp_c)
        self.beta = float(beta)
        self.exp_cap = float(exp_cap)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        sizes = [self.dim, *hidden, 1]
        self.mu = Mlp(sizes, rng=self.rng, init=init)
        self.nu = Mlp(sizes, rng=self.rng, init=init) if mode == "tf2" else None
        if mode == "tf1":
            self.clamp()
        self.opt_mu = Adam([self.mu.flat], lr=lr)
        self.opt_nu = Adam([self.nu.flat], lr=lr) if self.nu is not None else None

    @property
    def f(self) -> Mlp:
        return self.mu

    def networks(self) -> dict[str, Mlp]:
        return {"mu": self.mu} if self.nu is None else {"mu": self.mu, "nu": self.nu}

    def clamp(self) -> None:
        np.clip(self.mu.flat, -self.clamp_c, self.clamp_c, out=self.mu.flat)

    def set_step_size(self, step_size: float) -> None:
        for opt in (self.opt_mu, self.opt_nu):
            if opt is not None:
                opt.lr = float(step_size)


def _check(tf: TestFunctionPair, X, Y) -> tuple[np.ndarray, np.ndarray]:
    X, Y = as_batch(X, "X"), as_batch(Y, "Y")
    if X.shape[1] != tf.dim or Y.shape[1] != tf.dim:
        raise ValueError(f"test functions expect dimension {tf.dim}, got {X.shape[1]} and {Y.shape[1]}")
    return X, Y


def tf1_objective_and_grads(f: Mlp, X: np.ndarray, Y: np.ndarray):
    """``mean f(X) - mean f(Y)`` and its gradient w.r.t. ``f``'s parameters."""
    n, m = len(X), len(Y)
    out = f.forward(np.vstack([X, Y]))[:, 0]
    obj = out[:n].mean() - out[n:].mean()
    g = np.concatenate([np.full(n, 1.0 / n), np.full(m, -1.0 / m)])[:, None]
    grads, _ = f.backward(g, input_grad=False)
    return float(obj), grads


def tf2_objective_and_grads(mu: Mlp, nu: Mlp, X: np.ndarray, Y: np.ndarray, cost: np.ndarray,
                            beta: float, exp_cap: float = 20.0):
    """Smoothed dual objective over already-paired rows ``(X[i], Y[i])``.

    The exponent is clipped at ``exp_cap``; clipped pairs contribute no
    gradient through the penalty term.
    """
    L = len(X)
    a = mu.forward(X)[:, 0]
    b = nu.forward(Y)[:, 0]
    z = (a - b - cost) / beta
    clipped = z > exp_cap
    e = np.exp(np.minimum(z, exp_cap))
    obj = np.mean(a - b - beta * e)
    dpen = np.where(clipped, 0.0, e)
    g_a = ((1.0 - dpen) / L)[:, None]
    grads_mu, _ = mu.backward(g_a, input_grad=False)
    grads_nu, _ = nu.backward(-g_a, input_grad=False)
    return float(obj), grads_mu, grads_nu


def tf1_update(tf: TestFunctionPair, X, Y, step_size: float | None = None) -> float:
    """One ascent step on the TF1 objective followed by weight clamping.

    Returns the objective measured before the step.
    """
    if tf.mode != "tf1":
        raise ValueError("tf1_update needs a TF1 test function")
    X, Y = _check(tf, X, Y)
    if step_size is not None:
        tf.set_step_size(step_size)
    obj, grads = tf1_objective_and_grads(tf.mu, X, Y)
    tf.opt_mu.step([tf.mu.flat], [-tf.mu.flatten_grads(grads)])
    tf.clamp()
    return obj


def random_pairing(n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    L = min(n, m)
    return rng.permutation(n)[:L], rng.permutation(m)[:L]


def tf2_update(tf: TestFunctionPair, X, Y, step_size: float | None = None) -> float:
    """One ascent step on the smoothed dual over a random pairing of ``X`` and ``Y``."""
    if tf.mode != "tf2":
        raise ValueError("tf2_update needs a TF2 test function")
    X, Y = _check(tf, X, Y)
    if step_size is not None:
        tf.set_step_size(step_size)
    ix, iy = random_pairing(len(X), len(Y), tf.rng)
    Xp, Yp = X[ix], Y[iy]
    cost = np.linalg.norm(Xp - Yp, axis=1)
    obj, g_mu, g_nu = tf2_objective_and_grads(tf.mu, tf.nu, Xp, Yp, cost, tf.beta, tf.exp_cap)
    tf.opt_mu.step([tf.mu.flat], [-tf.mu.flatten_grads(g_mu)])
    tf.opt_nu.step([tf.nu.flat], [-tf.nu.flatten_grads(g_nu)])
    return obj


def update(tf: TestFunctionPair, X, Y, step_size: float | None = None) -> float:
    return tf1_update(tf, X, Y, step_size) if tf.mode == "tf1" else tf2_update(tf, X, Y, step_size)


def dual_objective(tf: TestFunctionPair, X, Y) -> float:
    """Objective value over the full empirical product measure (no sampling)."""
    X, Y = _check(tf, X, Y)
    a = tf.mu.forward(X)[:, 0]
    if tf.mode == "tf1":
        return float(a.mean() - tf.mu.forward(Y)[:, 0].mean())
    b = tf.nu.forward(Y)[:, 0]
    C = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    z = np.minimum((a[:, None] - b[None, :] - C) / tf.beta, tf.exp_cap)
    return float(a.mean() - b.mean() - tf.beta * np.exp(z).mean())


def distance_estimate(tf: TestFunctionPair, X, Y) -> float:
    """Distance reported by the estimator.

    TF1 reports its objective (a scaled distance). TF2 adds back ``beta``,
    the constant dropped from the smoothed dual, so the value estimates the
    smoothed transport cost itself.
    """
    obj = dual_objective(tf, X, Y)
    return obj if tf.mode == "tf1" else obj + tf.beta


def state_reward(tf: TestFunctionPair, s, side: str = "first"):
    """Per-state intrinsic reward: ``f(s)``/``mu(s)`` for the first policy, ``-f(s)``/``-nu(s)`` for the second."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    s = np.asarray(s, dtype=np.float64)
    if side == "first":
        out = tf.mu.forward(s)
    else:
        out = -(tf.nu if tf.nu is not None else tf.mu).forward(s)
    return float(out[0]) if s.ndim == 1 else out[:, 0]
