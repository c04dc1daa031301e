import numpy as np
import pytest
from scipy.stats import norm

from mixed_bo import validate
from mixed_bo.validate import (
    SUITES,
    CheckResult,
    argmax_probabilities,
    check_feature_kernel,
    check_hyperparam_likelihood,
    run_suites,
    truncated_bivariate,
)


class TestCheckResult:
    def test_detail(self):
        r = CheckResult(suite="s", name="n", passed=True, error=1.5e-5, tolerance=1e-4)
        assert r.detail == "err 1.50e-05 (tol 1e-04)"

    def test_non_finite_error_fails(self):
        assert not validate._check("s", "n", float("nan"), 1.0).passed


class TestReferences:
    def test_argmax_probabilities_of_exchangeable_vector(self):
        np.testing.assert_allclose(argmax_probabilities(np.zeros(3), np.eye(3)), np.full(3, 1.0 / 3.0), atol=1e-6)

    def test_argmax_probabilities_of_pair(self):
        p = argmax_probabilities(np.array([0.5, 0.0]), np.eye(2))
        assert p[0] == pytest.approx(norm.cdf(0.5 / np.sqrt(2.0)), abs=1e-6)

    def test_truncated_bivariate_matches_monte_carlo(self, rng):
        mean = np.array([0.2, 0.4])
        cov = np.array([[1.0, 0.3], [0.3, 0.8]])
        draws = rng.multivariate_normal(mean, cov, size=400_000)
        kept = draws[draws[:, 1] - draws[:, 0] <= 0.1, 1]
        m, v = truncated_bivariate(mean, cov, 0.1)
        assert m == pytest.approx(kept.mean(), abs=0.01)
        assert v == pytest.approx(kept.var(), abs=0.01)

    def test_true_hyperparameters_have_higher_evidence(self):
        assert all(r.passed for r in check_hyperparam_likelihood())

    def test_feature_inner_products_recover_the_kernel(self):
        results = check_feature_kernel()
        assert [r.suite for r in results] == ["feature-kernel", "feature-kernel"]
        assert all(r.passed for r in results), [(r.name, r.error) for r in results]
        assert results[1].error < 1.0


class TestRunSuites:
    def test_selected_suite(self):
        results = run_suites(["one-step-ep"])
        assert {r.suite for r in results} == {"one-step-ep"}
        assert all(r.passed for r in results)

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            run_suites(["nope"])

    def test_crash_counts_as_failure(self, monkeypatch):
        def boom():
            raise RuntimeError("broken")

        monkeypatch.setitem(SUITES, "probit-ep", boom)
        (result,) = run_suites(["probit-ep"])
        assert not result.passed
        assert result.name == "crashed"

    @pytest.mark.slow
    def test_every_suite_passes(self):
        failed = [(r.suite, r.name, r.error) for r in run_suites() if not r.passed]
        assert not failed
