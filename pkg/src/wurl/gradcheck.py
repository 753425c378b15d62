"""Finite-difference checks for every hand-written gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import evaluation, hrl, ot_dual, sac
from .nn import Mlp, numerical_gradient, relative_error

TOLERANCE = 1e-4
HIDDEN = (8, 8)


@dataclass
class CheckResult:
    name: str
    rel_error: float
    passed: bool


def _compare(net: Mlp, loss_fn: Callable[[], tuple[float, list]], scale: float) -> float:
    _, analytic = loss_fn()
    analytic = [g * scale for g in analytic]
    numeric = numerical_gradient(lambda: loss_fn()[0], net.params)
    return relative_error(analytic, numeric)


def _mlp(head: str):
    def check(rng, scale):
        net = Mlp([3, *HIDDEN, 2], head=head, rng=rng)
        x = rng.normal(size=(6, 3))
        w = rng.normal(size=(6, 2))

        def loss():
            out = net.forward(x)
            grads, _ = net.backward(w)
            return float(np.sum(w * out)), grads
        return _compare(net, loss, scale)
    return check


def _mlp_input(rng, scale):
    net = Mlp([3, *HIDDEN, 2], head="tanh", rng=rng)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 2))
    net.forward(x)
    _, gx = net.backward(w, param_grads=False)
    numeric = numerical_gradient(lambda: float(np.sum(w * net.forward(x))), [x])[0]
    return relative_error(gx * scale, numeric)


def _tf1(rng, scale):
    f = Mlp([2, *HIDDEN, 1], rng=rng)
    X, Y = rng.normal(size=(7, 2)), rng.normal(1.0, 1.0, size=(5, 2))
    return _compare(f, lambda: ot_dual.tf1_objective_and_grads(f, X, Y), scale)


def _tf2(rng, scale):
    mu, nu = Mlp([2, *HIDDEN, 1], rng=rng), Mlp([2, *HIDDEN, 1], rng=rng)
    X, Y = rng.normal(size=(6, 2)), rng.normal(2.0, 1.0, size=(6, 2))
    cost = np.linalg.norm(X - Y, axis=1)

    def loss_mu():
        obj, gm, _ = ot_dual.tf2_objective_and_grads(mu, nu, X, Y, cost, beta=1.0)
        return obj, gm

    def loss_nu():
        obj, _, gn = ot_dual.tf2_objective_and_grads(mu, nu, X, Y, cost, beta=1.0)
        return obj, gn
    return max(_compare(mu, loss_mu, scale), _compare(nu, loss_nu, scale))


def _actor(rng, scale):
    actor = sac.Actor(4, 2, 0.1, HIDDEN, rng=rng)
    q1, q2 = Mlp([6, *HIDDEN, 1], rng=rng), Mlp([6, *HIDDEN, 1], rng=rng)
    obs, eps = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))

    def loss():
        value, grads, _ = sac.actor_loss_and_grads(actor, q1, q2, obs, eps, alpha=0.1)
        return value, grads
    return _compare(actor.net, loss, scale)


def _critic(rng, scale):
    q1, q2 = Mlp([6, *HIDDEN, 1], rng=rng), Mlp([6, *HIDDEN, 1], rng=rng)
    obs, act, target = rng.normal(size=(6, 4)), rng.normal(size=(6, 2)), rng.normal(size=6)

    def loss1():
        value, g1, _ = sac.critic_loss_and_grads(q1, q2, obs, act, target)
        return value, g1

    def loss2():
        value, _, g2 = sac.critic_loss_and_grads(q1, q2, obs, act, target)
        return value, g2
    return max(_compare(q1, loss1, scale), _compare(q2, loss2, scale))


def _discriminator(rng, scale):
    net = Mlp([4, *HIDDEN, 3], rng=rng)
    X, y = rng.normal(size=(9, 4)), rng.integers(0, 3, size=9)
    return _compare(net, lambda: evaluation.cross_entropy_and_grads(net, X, y), scale)


def _ppo_policy(rng, scale):
    net = Mlp([4, *HIDDEN, 3], rng=rng)
    x, actions = rng.normal(size=(8, 4)), rng.integers(0, 3, size=8)
    adv = rng.normal(size=8)
    # old log-probs offset so some ratios sit inside and some outside the clip band
    logp = hrl.log_softmax(net.forward(x))[np.arange(8), actions]
    old = logp + rng.choice([-0.5, 0.05, 0.5], size=8)
    return _compare(net, lambda: hrl.ppo_policy_loss_and_grads(net, x, actions, old, adv, 0.2, 0.01), scale)


def _ppo_value(rng, scale):
    net = Mlp([4, *HIDDEN, 1], rng=rng)
    x, targets = rng.normal(size=(7, 4)), rng.normal(size=7)
    return _compare(net, lambda: hrl.value_loss_and_grads(net, x, targets), scale)


CHECKS: dict[str, Callable] = {
    "mlp_linear": _mlp("linear"),
    "mlp_tanh": _mlp("tanh"),
    "mlp_input": _mlp_input,
    "tf1_objective": _tf1,
    "tf2_objective": _tf2,
    "sac_actor": _actor,
    "sac_critic": _critic,
    "discriminator_xent": _discriminator,
    "ppo_policy": _ppo_policy,
    "ppo_value": _ppo_value,
}


def run_gradchecks(perturb: str | None = None, seed: int = 0, tol: float = TOLERANCE) -> list[CheckResult]:
    """Run every check. ``perturb`` names a check whose analytic gradient is scaled by 1.01 (a negative control)."""
    if perturb is not None and perturb not in CHECKS:
        raise ValueError(f"unknown check {perturb!r}; choose from {sorted(CHECKS)}")
    results = []
    for name, check in CHECKS.items():
        rng = np.random.default_rng([seed, len(name)])
        err = check(rng, 1.01 if name == perturb else 1.0)
        results.append(CheckResult(name, err, err < tol))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name} rel_err={r.rel_error:.3e}" for r in results]
    return "\n".join(lines) + "\n"
