"""Primal-form Wasserstein estimators built on exact 1-D optimal transport.

A batch of states is an ``(N, d)`` float array; each row carries mass 1/N.
Projection-based estimators share one trick: in 1-D the optimal coupling
for any convex cost is the north-west-corner plan on the sorted samples, so
a coupling in rank space can be computed once per ``(N, M)`` and mapped back
to sample indices through each direction's sort order.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

ORACLE_MAX_SIZE = 10


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def as_values(xs, name: str = "values") -> np.ndarray:
    arr = np.asarray(xs, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_batch(points, name: str = "batch") -> np.ndarray:
    """Validate a state batch: non-empty, 2-D, finite."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array of points, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty with dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check_pair(A, B) -> tuple[np.ndarray, np.ndarray]:
    A, B = as_batch(A, "A"), as_batch(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def _check_exponent(p: float) -> float:
    if not p > 0:
        raise ValueError(f"cost exponent must be positive, got {p}")
    return float(p)


@lru_cache(maxsize=256)
def _rank_plan(n: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """North-west-corner plan between ``n`` and ``m`` uniform sorted atoms.

    Mass is measured in units of 1/(n*m): rank-row i owns [i*m, (i+1)*m) and
    rank-column j owns [j*n, (j+1)*n). Each piece of the merged partition is
    one nonzero entry, so there are at most n + m - 1 of them and the
    marginals are exact up to a handful of float additions.
    """
    ends = np.union1d(np.arange(1, n + 1) * m, np.arange(1, m + 1) * n)
    starts = np.concatenate(([0], ends[:-1]))
    rows = starts // m
    cols = starts // n
    weights = (ends - starts) / float(n * m)
    for arr in (rows, cols, weights):
        arr.setflags(write=False)
    return rows, cols, weights


def _sorted_order(values: np.ndarray, axis: int = 0) -> np.ndarray:
    return np.argsort(values, axis=axis, kind="stable")


def matching_matrix(xs, ys) -> np.ndarray:
    """Optimal 1-D coupling between two uniform empirical distributions.

    Returns the dense ``(N, M)`` matrix whose rows sum to 1/N and columns to
    1/M. Ties are broken by original index.
    """
    x, y = as_values(xs, "xs"), as_values(ys, "ys")
    rows, cols, w = _rank_plan(x.size, y.size)
    P = np.zeros((x.size, y.size))
    P[_sorted_order(x)[rows], _sorted_order(y)[cols]] = w
    return P


def wd_1d(xs, ys, p: float = 1.0) -> float:
    """Exact p-Wasserstein cost (not its p-th root) between two 1-D samples."""
    x, y = as_values(xs, "xs"), as_values(ys, "ys")
    p = _check_exponent(p)
    xs_sorted, ys_sorted = np.sort(x, kind="stable"), np.sort(y, kind="stable")
    if x.size == y.size:
        return float(np.mean(np.abs(xs_sorted - ys_sorted) ** p))
    rows, cols, w = _rank_plan(x.size, y.size)
    return float(np.sum(w * np.abs(xs_sorted[rows] - ys_sorted[cols]) ** p))


def cost_matrix(A, B, p: float = 1.0) -> np.ndarray:
    """Pairwise ``||a - b||_2 ** p``."""
    A, B = _check_pair(A, B)
    C = cdist(A, B)
    return C if p == 1 else C ** _check_exponent(p)


def sample_directions(d: int, k: int, rng=None) -> np.ndarray:
    """``k`` unit vectors drawn uniformly from the sphere in R^d (rows)."""
    if d < 1 or k < 1:
        raise ValueError(f"need d >= 1 and k >= 1, got d={d}, k={k}")
    rng = _as_rng(rng)
    v = rng.standard_normal((k, d))
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms < 1e-12):
        bad = norms < 1e-12
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def _directions(d: int, k: int, rng, directions) -> np.ndarray:
    if directions is not None:
        v = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        if v.shape[1] != d:
            raise ValueError(f"directions have dimension {v.shape[1]}, batches have {d}")
        return v
    return sample_directions(d, k, rng)


def projected_plan(A, B, directions: np.ndarray):
    """Per-direction sparse couplings found from 1-D projections.

    Returns ``(rows, cols, weights)`` where ``rows``/``cols`` have shape
    ``(K, L)`` and index into ``A``/``B``; ``weights`` has shape ``(L,)`` and is
    shared by every direction.
    """
    pa = A @ directions.T
    pb = B @ directions.T
    r, c, w = _rank_plan(A.shape[0], B.shape[0])
    rows = _sorted_order(pa, axis=0).T[:, r]
    cols = _sorted_order(pb, axis=0).T[:, c]
    return rows, cols, w


def sliced_wd(A, B, K: int = 32, rng=None, p: float = 1.0, directions=None) -> float:
    """Mean 1-D Wasserstein cost of the projected samples (SWD)."""
    A, B = _check_pair(A, B)
    p = _check_exponent(p)
    v = _directions(A.shape[1], K, rng, directions)
    pa = np.sort(A @ v.T, axis=0, kind="stable")
    pb = np.sort(B @ v.T, axis=0, kind="stable")
    r, c, w = _rank_plan(A.shape[0], B.shape[0])
    per_direction = w @ (np.abs(pa[r] - pb[c]) ** p)
    return float(per_direction.mean())


def _paired_costs(A, B, rows, cols, p: float) -> np.ndarray:
    diff = A[rows] - B[cols]
    cost = np.sqrt(np.einsum("kld,kld->kl", diff, diff))
    return cost if p == 1 else cost ** p


def projected_wd(A, B, K: int = 32, rng=None, p: float = 1.0, directions=None) -> float:
    """Projected Wasserstein distance (PWD).

    Couplings come from 1-D projections; the cost of each coupling is paid in
    the original space. Returns the mean over directions.
    """
    A, B = _check_pair(A, B)
    p = _check_exponent(p)
    v = _directions(A.shape[1], K, rng, directions)
    rows, cols, w = projected_plan(A, B, v)
    return float((_paired_costs(A, B, rows, cols, p) @ w).mean())


def amortized_rewards(S, T, K: int = 32, rng=None, p: float = 1.0, directions=None) -> np.ndarray:
    """Split the PWD between ``S`` and ``T`` into one credit per row of ``S``.

    Credit i is the coupling-weighted cost of everything ``S[i]`` is matched
    to, averaged over directions, so the credits sum to ``projected_wd`` with
    the same directions.
    """
    S, T = _check_pair(S, T)
    p = _check_exponent(p)
    v = _directions(S.shape[1], K, rng, directions)
    rows, cols, w = projected_plan(S, T, v)
    weighted = _paired_costs(S, T, rows, cols, p) * w
    n, k = S.shape[0], v.shape[0]
    offsets = (np.arange(k) * n)[:, None]
    credits = np.bincount((rows + offsets).ravel(), weights=weighted.ravel(), minlength=k * n)
    return credits.reshape(k, n).mean(axis=0)


def exact_wd_oracle(A, B, p: float = 1.0) -> float:
    """Exact empirical Wasserstein cost for small equal-size batches via optimal assignment."""
    A, B = _check_pair(A, B)
    if A.shape[0] != B.shape[0]:
        raise ValueError("oracle needs equal batch sizes")
    if A.shape[0] > ORACLE_MAX_SIZE:
        raise ValueError(f"oracle limited to {ORACLE_MAX_SIZE} points per batch")
    C = cost_matrix(A, B, p)
    r, c = linear_sum_assignment(C)
    return float(C[r, c].mean())


def min_pairwise_distance(distances: Sequence[float]) -> float:
    """Distance to the nearest other policy: the scaling for its intrinsic reward."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise ValueError("need at least one other policy")
    return float(d.min())


def mean_pairwise_distance(distances: Sequence[float]) -> float:
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise ValueError("need at least one other policy")
    return float(d.mean())


def save_batch(path, batch) -> None:
    np.savetxt(path, as_batch(batch), fmt="%.17g")


def load_batch(path) -> np.ndarray:
    return as_batch(np.loadtxt(path, dtype=np.float64, ndmin=2))


def format_values(values) -> str:
    return "\n".join(repr(float(v)) for v in np.ravel(values)) + "\n"


def parse_values(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.split()], dtype=np.float64)
