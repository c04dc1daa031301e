import numpy as np
import pytest
from scipy import stats

from mixed_bo.errors import ConfigurationError
from mixed_bo.es import (
    GRID_POINTS,
    MTESAcquisition,
    argmax_entropy,
    candidate_pool,
    default_grid,
    ei_target,
    es_acquisition,
    pxstar_entropy,
)
from mixed_bo.kernel import TARGET, InputTuple
from mixed_bo.validate import check_es_toy, es_toy_state


class TestExpectedImprovement:
    def test_closed_form(self):
        mu, sigma, best = 0.3, 0.5, 0.1
        z = (mu - best) / sigma
        expected = (mu - best) * stats.norm.cdf(z) + sigma * stats.norm.pdf(z)
        assert ei_target(mu, sigma, best) == pytest.approx(expected)

    def test_zero_variance_is_plain_improvement(self):
        np.testing.assert_array_equal(ei_target(np.array([0.5, -0.5]), np.zeros(2), 0.0), [0.5, 0.0])

    def test_margin_lowers_improvement(self):
        assert ei_target(0.0, 1.0, 0.0, xi=0.5) < ei_target(0.0, 1.0, 0.0)


class TestCandidatePool:
    def test_keeps_highest_ei(self, mixed_gp, rng):
        grid = rng.uniform(size=(200, 2))
        pool = candidate_pool(mixed_gp, grid, k=10)
        assert pool.k == 10
        assert np.all(np.diff(pool.ei) <= 0.0)
        mean, var = mixed_gp.mean_var(grid, TARGET)
        all_ei = ei_target(mean, np.sqrt(var), mixed_gp.obs.y_max)
        assert pool.ei[-1] >= np.sort(all_ei)[-10] - 1e-12

    def test_rejects_small_k(self, mixed_gp, rng):
        with pytest.raises(ConfigurationError):
            candidate_pool(mixed_gp, rng.uniform(size=(20, 2)), k=1)

    def test_rejects_short_grid(self, mixed_gp, rng):
        with pytest.raises(ConfigurationError):
            candidate_pool(mixed_gp, rng.uniform(size=(5, 2)), k=10)


class TestArgmaxEntropy:
    def test_exchangeable_candidates_are_near_uniform(self, rng):
        z = rng.standard_normal((20_000, 4))
        assert argmax_entropy(np.zeros(4), np.eye(4), z) == pytest.approx(np.log(4.0), abs=0.01)

    def test_dominant_candidate_has_no_entropy(self, rng):
        z = rng.standard_normal((500, 3))
        assert argmax_entropy(np.array([10.0, 0.0, 0.0]), 0.01 * np.eye(3), z) == 0.0

    def test_pxstar_entropy_is_bounded(self, mixed_gp, rng):
        pool = candidate_pool(mixed_gp, rng.uniform(size=(100, 2)), k=8)
        value = pxstar_entropy(mixed_gp, pool, 500, rng)
        assert 0.0 <= value <= np.log(8.0) + 1e-12

    def test_pxstar_entropy_needs_draws(self, mixed_gp, rng):
        pool = candidate_pool(mixed_gp, rng.uniform(size=(100, 2)), k=8)
        with pytest.raises(ConfigurationError):
            pxstar_entropy(mixed_gp, pool, 0, rng)


class TestMTESAcquisition:
    def test_matches_exact_argmax_probabilities(self):
        failed = [r for r in check_es_toy() if not r.passed]
        assert not failed, [(r.name, r.error) for r in failed]

    def test_auxiliary_values_are_finite(self):
        gp, candidates = es_toy_state()
        acq = MTESAcquisition(gp, candidates, np.random.default_rng(0).standard_normal((2000, candidates.k)))
        values = acq.evaluate(np.array([[0.2], [0.5], [0.95]]), 2)
        assert values.shape == (3,)
        assert np.all(np.isfinite(values))

    def test_call_matches_evaluate(self):
        gp, candidates = es_toy_state()
        acq = MTESAcquisition(gp, candidates, np.random.default_rng(1).standard_normal((1000, candidates.k)))
        t = InputTuple((0.6,), TARGET)
        assert acq(t) == pytest.approx(acq.evaluate(t.array[None, :], TARGET)[0])

    def test_precompute_uses_the_grid(self, mixed_gp, rng):
        acq = MTESAcquisition.precompute(mixed_gp, rng.uniform(size=(300, 2)), rng, k=6, n_draws=100, n_outer=4)
        assert acq.candidates.k == 6
        assert acq.z.shape == (100, 6)
        assert 0.0 <= acq.base_entropy <= np.log(6.0) + 1e-12

    def test_observed_tuple_is_rejected(self):
        gp, candidates = es_toy_state()
        with pytest.raises(ConfigurationError):
            es_acquisition(gp, InputTuple((0.45,), TARGET), candidates, 5, 100, np.random.default_rng(0))


def test_default_grid(rng):
    bounds = np.array([[-1.0, 1.0], [2.0, 3.0]])
    grid = default_grid(bounds, rng)
    assert grid.shape == (GRID_POINTS, 2)
    assert np.all((grid >= bounds[:, 0]) & (grid <= bounds[:, 1]))
