"""Minimal feed-forward networks with hand-written backprop, Adam, and checkpoints.

Everything is float64 so central finite differences can verify the
analytic gradients to ~1e-8.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Callable, Sequence

import numpy as np

from .errors import CheckpointError, StateError

HEADS = ("linear", "tanh")


class Mlp:
    """ReLU multilayer perceptron.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``x`` of
    shape ``(B, fan_in)`` maps through ``x @ W + b``. ``params`` is the list
    ``[W0, b0, W1, b1, ...]``; every entry is a view into the single vector
    ``flat``, which is what the optimizers update.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        head: str = "linear",
        rng: np.random.Generator | None = None,
        init: str = "uniform",
    ):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least input and output widths >= 1, got {sizes}")
        if head not in HEADS:
            raise ValueError(f"unknown output head {head!r}")
        self.sizes = sizes
        self.head = head
        rng = rng if rng is not None else np.random.default_rng(0)
        shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        self._bind(np.zeros(sum(int(np.prod(s)) for s in shapes)), shapes)
        if init == "uniform":
            for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                bound = 1.0 / np.sqrt(fan_in)
                self.params[2 * k][...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                self.params[2 * k + 1][...] = rng.uniform(-bound, bound, size=fan_out)
        elif init != "zeros":
            raise ValueError(f"unknown init {init!r}")
        self._cache: tuple | None = None

    def _bind(self, flat: np.ndarray, shapes) -> None:
        # params are views into one flat vector so optimizers can work on it directly
        self.flat = flat
        self.params = []
        offset = 0
        for shape in shapes:
            size = int(np.prod(shape))
            self.params.append(flat[offset:offset + size].reshape(shape))
            offset += size

    def flatten_grads(self, grads: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([g.ravel() for g in grads])

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        inputs, masks = [], []
        h = X
        for k in range(self.n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            inputs.append(h)
            z = h @ W + b
            if k < self.n_layers - 1:
                mask = z > 0
                masks.append(mask)
                h = z * mask
            else:
                h = np.tanh(z) if self.head == "tanh" else z
        self._cache = (inputs, masks, h)
        return h[0] if single else h

    __call__ = forward

    def backward(self, grad_out, param_grads: bool = True,
                 input_grad: bool = True) -> tuple[list[np.ndarray] | None, np.ndarray | None]:
        """Backpropagate ``grad_out`` (dLoss/dOutput) through the last forward pass.

        Returns the parameter gradients (aligned with ``params``) and the
        gradient with respect to the network input; either can be skipped.
        The cached forward pass is consumed.
        """
        if self._cache is None:
            raise StateError("backward() needs a preceding forward() pass")
        inputs, masks, out = self._cache
        self._cache = None
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != out.shape:
            raise ValueError(f"output gradient shape {g.shape} != output shape {out.shape}")
        if self.head == "tanh":
            g = g * (1.0 - out * out)
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        for k in reversed(range(self.n_layers)):
            W = self.params[2 * k]
            if param_grads:
                grads[2 * k] = inputs[k].T @ g
                grads[2 * k + 1] = g.sum(axis=0)
            if k > 0:
                g = (g @ W.T) * masks[k - 1]
            elif input_grad:
                g = g @ W.T
            else:
                g = None
        return (grads if param_grads else None), g

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = list(self.sizes)
        clone.head = self.head
        clone._bind(self.flat.copy(), [p.shape for p in self.params])
        clone._cache = None
        return clone

    def load_from(self, other: "Mlp") -> None:
        if other.sizes != self.sizes:
            raise ValueError("layer shapes differ")
        self.flat[...] = other.flat


class Adam:
    """Bias-corrected adaptive moment estimation over a list of arrays."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        """Descend along ``grads``; parameters are updated in place and returned."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient count does not match optimizer state")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape or m.shape != p.shape:
                raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"])
        for i in range(len(self.m)):
            self.m[i][...] = arrays[f"m{i}"]
            self.v[i][...] = arrays[f"v{i}"]


def param_hash(*nets: Mlp) -> str:
    h = hashlib.sha256()
    for net in nets:
        for p in net.params:
            h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


def save_checkpoint(path, nets: dict[str, Mlp], arrays: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write networks (plus optional extra arrays) to a single ``.npz`` container.

    Layer shapes and heads go into a JSON header so the file is self-describing.
    The write is atomic: a temporary file is renamed over ``path``.
    """
    header = {"nets": {name: {"sizes": net.sizes, "head": net.head} for name, net in nets.items()},
              "meta": meta or {}}
    payload = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for name, net in nets.items():
        for i, p in enumerate(net.params):
            payload[f"net/{name}/{i}"] = p
    for key, value in (arrays or {}).items():
        payload[f"arr/{key}"] = np.asarray(value)
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict[str, np.ndarray], dict]:
    try:
        with np.load(os.fspath(path), allow_pickle=False) as data:
            header = json.loads(str(data["__header__"]))
            nets = {}
            for name, spec in header["nets"].items():
                net = Mlp(spec["sizes"], head=spec["head"], init="zeros")
                for i, p in enumerate(net.params):
                    stored = data[f"net/{name}/{i}"]
                    if stored.shape != p.shape:
                        raise CheckpointError(f"{path}: shape mismatch for {name} param {i}")
                    p[...] = stored
                nets[name] = net
            arrays = {k[4:]: data[k] for k in data.files if k.startswith("arr/")}
            return nets, arrays, header.get("meta", {})
    except CheckpointError:
        raise
    except Exception as exc:  # zip, json and key errors all mean the same thing here
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc


def relative_error(a, b) -> float:
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numerical_gradient(loss_fn: Callable[[], float], params: Sequence[np.ndarray],
                       h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``loss_fn`` w.r.t. each array in ``params`` (perturbed in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads
