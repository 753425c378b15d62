"""Estimator comparison on pairs of Gaussian samples with a known transport distance.

Two isotropic unit-variance Gaussians whose means differ by ``s`` along the
first axis are a translation of each other, so their 1-Wasserstein distance
is exactly ``s``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np

from . import ot_dual
from .ot_primal import projected_wd, sliced_wd
from .seeding import make_rng

METHODS = ("tf1", "tf2", "swd", "pwd")


@dataclass
class EstimateConfig:
    separations: tuple[float, ...] = (2.0, 16.0, 64.0)
    samples: int = 256
    dim: int = 1
    repeats: int = 3
    tf_steps: int = 2000
    tf_lr: float = 1e-3
    tf_hidden: tuple[int, ...] = (64, 64)
    projections: int = 32
    methods: tuple[str, ...] = METHODS

    def __post_init__(self):
        self.separations = tuple(float(s) for s in self.separations)
        self.methods = tuple(self.methods)
        self.tf_hidden = tuple(int(h) for h in self.tf_hidden)
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}")
        if self.samples < 1 or self.dim < 1 or self.repeats < 1 or self.projections < 1:
            raise ValueError("samples, dim, repeats and projections must be >= 1")
        if min(self.separations, default=0.0) < 0:
            raise ValueError("separations must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("separations", "methods", "tf_hidden"):
            d[key] = list(d[key])
        return d


def gaussian_pair(separation: float, n: int, dim: int, rng) -> tuple[np.ndarray, np.ndarray]:
    X = rng.standard_normal((n, dim))
    Y = rng.standard_normal((n, dim))
    Y[:, 0] += separation
    return X, Y


def train_test_function(mode: str, X, Y, steps: int, lr: float, hidden, rng) -> float:
    tf = ot_dual.TestFunctionPair(X.shape[1], mode, hidden=hidden, lr=lr, rng=rng)
    for _ in range(steps):
        ot_dual.update(tf, X, Y)
    return ot_dual.distance_estimate(tf, X, Y)


def estimate_once(method: str, X, Y, cfg: EstimateConfig, rng) -> float:
    if method == "swd":
        return sliced_wd(X, Y, cfg.projections, rng)
    if method == "pwd":
        return projected_wd(X, Y, cfg.projections, rng)
    return train_test_function(method, X, Y, cfg.tf_steps, cfg.tf_lr, cfg.tf_hidden, rng)


def run_study(cfg: EstimateConfig, seed: int = 0, on_record=None):
    """All estimates for every (separation, repeat, method).

    Returns ``(records, timings)``. The records hold only seeded values so
    they are reproducible; wall-clock seconds are kept apart in ``timings``.
    """
    records, timings = [], []
    for s in cfg.separations:
        for r in range(cfg.repeats):
            X, Y = gaussian_pair(s, cfg.samples, cfg.dim, make_rng(seed, "samples", repr(s), r))
            for method in cfg.methods:
                t0 = time.perf_counter()
                value = estimate_once(method, X, Y, cfg, make_rng(seed, method, repr(s), r))
                timings.append({"separation": s, "repeat": r, "method": method,
                                "seconds": time.perf_counter() - t0})
                rec = {"separation": s, "repeat": r, "method": method, "estimate": float(value)}
                records.append(rec)
                if on_record is not None:
                    on_record(rec)
    return records, timings


def summarize(records, timings=None) -> dict:
    """``{(separation, method): (mean, std, mean_seconds)}``."""
    out = {}
    keys = sorted({(r["separation"], r["method"]) for r in records})
    for s, m in keys:
        vals = np.array([r["estimate"] for r in records if r["separation"] == s and r["method"] == m])
        secs = [t["seconds"] for t in (timings or []) if t["separation"] == s and t["method"] == m]
        out[(s, m)] = (float(vals.mean()), float(vals.std()), float(np.mean(secs)) if secs else float("nan"))
    return out


def format_report(cfg: EstimateConfig, records) -> str:
    summary = summarize(records)
    lines = [f"samples {cfg.samples} dim {cfg.dim} repeats {cfg.repeats} projections {cfg.projections} "
             f"tf_steps {cfg.tf_steps}",
             "separation method mean std"]
    for (s, m), (mean, std, _) in summary.items():
        lines.append(f"{s!r} {m} {mean!r} {std!r}")
    return "\n".join(lines) + "\n"
