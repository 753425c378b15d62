"""Tests for the Gaussian-pair estimator study."""

import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from wurl.estimate import EstimateConfig, format_report, gaussian_pair, run_study, summarize
from wurl.seeding import make_rng

# reference means over 256-sample pairs: (separation, PWD, SWD)
REFERENCE = [(2.0, 3.21, 0.791), (16.0, 16.3, 6.31), (64.0, 64.2, 25.9)]


def test_gaussian_pair_is_a_translation():
    X, Y = gaussian_pair(3.0, 50, 2, np.random.default_rng(0))
    assert X.shape == Y.shape == (50, 2)
    assert np.mean(Y[:, 0]) - np.mean(X[:, 0]) == pytest.approx(3.0, abs=0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        EstimateConfig(methods=("pwd", "emd"))
    with pytest.raises(ValueError):
        EstimateConfig(samples=0)
    with pytest.raises(ValueError):
        EstimateConfig(separations=(-1.0,))


def test_zero_separation_primal_estimates_small_positive():
    cfg = EstimateConfig(separations=(0.0,), samples=256, repeats=3, methods=("swd", "pwd"))
    records, _ = run_study(cfg, seed=0)
    for r in records:
        assert 0 < r["estimate"] < 0.3


def test_pwd_matches_scipy_in_one_dimension():
    cfg = EstimateConfig(separations=(2.0,), samples=64, repeats=2, methods=("pwd",))
    records, _ = run_study(cfg, seed=3)
    for r in records:
        X, Y = gaussian_pair(2.0, 64, 1, make_rng(3, "samples", repr(2.0), r["repeat"]))
        assert r["estimate"] == pytest.approx(wasserstein_distance(X[:, 0], Y[:, 0]), rel=1e-9)


def test_same_seed_same_report():
    cfg = EstimateConfig(separations=(2.0, 16.0), samples=32, repeats=2, tf_steps=5)
    a, ta = run_study(cfg, seed=1)
    b, _ = run_study(cfg, seed=1)
    assert a == b and format_report(cfg, a) == format_report(cfg, b)
    summary = summarize(a, ta)
    assert set(summary) == {(s, m) for s in (2.0, 16.0) for m in ("tf1", "tf2", "swd", "pwd")}
    assert all(np.isfinite(v[2]) for v in summary.values())


def test_five_dimensional_clouds_follow_reference_pattern():
    """With 5-D unit clouds the primal estimators land on the reference means.

    PWD within 20% at every separation and SWD within 20% of its reference, so
    both the shrinking PWD bias and SWD's underestimate appear.
    """
    cfg = EstimateConfig(dim=5, samples=256, repeats=3, methods=("swd", "pwd"))
    summary = summarize(run_study(cfg, seed=0)[0])
    for s, pwd, swd in REFERENCE:
        assert summary[(s, "pwd")][0] == pytest.approx(pwd, rel=0.2)
        assert summary[(s, "swd")][0] == pytest.approx(swd, rel=0.2)
