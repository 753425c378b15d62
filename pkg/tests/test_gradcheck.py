"""Tests for the finite-difference gradient suite."""

from wurl.gradcheck import CHECKS, format_results, run_gradchecks


def test_every_check_passes():
    results = run_gradchecks()
    assert [r.name for r in results] == list(CHECKS)
    assert all(r.passed and r.rel_error < 1e-4 for r in results), format_results(results)


def test_perturbed_gradient_is_caught():
    for name in ("mlp_tanh", "tf2_objective", "ppo_policy"):
        results = {r.name: r for r in run_gradchecks(perturb=name)}
        assert not results[name].passed
        assert all(r.passed for n, r in results.items() if n != name)


def test_report_lists_every_loss():
    text = format_results(run_gradchecks())
    assert len(text.splitlines()) == len(CHECKS)
    assert all(f" {name} " in text for name in CHECKS)
