import numpy as np
import pytest

from mixed_bo.ep import MixedGP
from mixed_bo.errors import ConfigurationError
from mixed_bo.features import (
    FunctionSample,
    GaussianWeights,
    draw_features,
    feature_matrix,
    model_weights,
    optimize_maximizer,
    output_features,
    sample_function,
    sample_maximizers,
    weights_from_data,
)
from mixed_bo.kernel import TARGET, Hyperparams, ObservationSet, cov_arrays
from mixed_bo.validate import check_feature_gradients


@pytest.fixture
def h1():
    return Hyperparams(gamma=[[30.0]], P=[[300.0], [200.0]], s=[[1.0], [0.9]], m=[0.0, 0.3], noise_var=1e-2)


class TestFeatureBasis:
    def test_shapes(self, h2, rng):
        basis = draw_features(h2, 40, rng)
        assert basis.W.shape == (1, 40, 2)
        assert basis.B.shape == (1, 40)
        assert basis.size == 40
        Phi = feature_matrix(basis, h2, rng.uniform(size=(7, 2)), 2)
        assert Phi.shape == (7, 40)

    def test_rejects_empty_basis(self, h2, rng):
        with pytest.raises(ConfigurationError):
            draw_features(h2, 0, rng)

    def test_single_point_features(self, h2, rng):
        basis = draw_features(h2, 10, rng)
        x = np.array([0.3, 0.7])
        np.testing.assert_allclose(output_features(basis, h2, 2, x), feature_matrix(basis, h2, x[None, :], 2)[0])

    def test_inner_products_approximate_kernel(self, h2):
        rng = np.random.default_rng(1)
        basis = draw_features(h2, 20_000, rng)
        X = rng.uniform(size=(5, 2))
        for i, j in ((1, 1), (1, 2), (2, 2)):
            approx = feature_matrix(basis, h2, X, i) @ feature_matrix(basis, h2, X, j).T
            exact = cov_arrays(h2, X, i, X, j)
            scale = np.sqrt(h2.prior_var(i) * h2.prior_var(j))
            np.testing.assert_allclose(approx, exact, atol=0.05 * scale)

    def test_gradients_match_finite_differences(self):
        failed = [r for r in check_feature_gradients() if not r.passed]
        assert not failed, [(r.name, r.error) for r in failed]

    def test_error_shrinks_with_more_features(self, h2):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(50, 2))
        xp = np.clip(x + 0.1 * rng.standard_normal((50, 2)), 0.0, 1.0)
        idx = rng.integers(1, 3, size=50)
        idx_p = rng.integers(1, 3, size=50)
        exact = np.array([cov_arrays(h2, x[k:k + 1], idx[k], xp[k:k + 1], idx_p[k])[0, 0] for k in range(50)])
        scale = np.sqrt([h2.prior_var(i) * h2.prior_var(j) for i, j in zip(idx, idx_p)])

        def mean_error(m):
            basis = draw_features(h2, m, rng)
            approx = np.array([
                feature_matrix(basis, h2, x[k:k + 1], idx[k])[0] @ feature_matrix(basis, h2, xp[k:k + 1], idx_p[k])[0]
                for k in range(50)
            ])
            return float(np.mean(np.abs(approx - exact) / scale))

        small, large = mean_error(50), mean_error(2000)
        assert large < 0.05
        assert large < small

    def test_gradients_with_two_latent_processes(self):
        h = Hyperparams(gamma=[[20.0, 10.0], [60.0, 40.0]], P=[[100.0, 50.0], [60.0, 90.0]],
                        s=[[1.0, 0.5], [0.7, 0.9]], m=[0.0, 0.1], noise_var=1e-3)
        rng = np.random.default_rng(8)
        basis = draw_features(h, 100, rng)
        sample = sample_function(basis, GaussianWeights.prior(basis.size), rng)
        x = rng.uniform(size=(20, 2))
        step = 1e-5
        for i in (1, 2):
            g = sample.grad(x, i)
            for k in range(2):
                e = np.zeros(2)
                e[k] = step
                fd = (sample(x + e, i) - sample(x - e, i)) / (2.0 * step)
                np.testing.assert_allclose(g[:, k], fd, rtol=1e-5, atol=1e-5)


class TestWeightPosterior:
    @pytest.mark.parametrize("n,size", [(12, 5), (3, 8)])
    def test_matches_direct_formula(self, n, size, rng):
        Phi = rng.normal(size=(n, size))
        noise = rng.uniform(0.1, 0.5, size=n)
        resid = rng.normal(size=n)
        w = weights_from_data(Phi, noise, resid)
        A = Phi.T @ (Phi / noise[:, None]) + np.eye(size)
        np.testing.assert_allclose(w.mean, np.linalg.solve(A, Phi.T @ (resid / noise)), atol=1e-10)
        np.testing.assert_allclose(w.covariance(), np.linalg.inv(A), atol=1e-10)

    def test_woodbury_samples_have_the_posterior_covariance(self, rng):
        Phi = rng.normal(size=(2, 4))
        w = weights_from_data(Phi, np.array([0.2, 0.3]), np.array([1.0, -0.5]))
        assert w.chol_K is not None
        draws = np.array([w.sample(rng) for _ in range(4000)])
        np.testing.assert_allclose(np.cov(draws.T), w.covariance(), atol=0.1)
        np.testing.assert_allclose(draws.mean(axis=0), w.mean, atol=0.1)

    def test_no_data_is_the_prior(self):
        w = weights_from_data(np.zeros((0, 3)), np.zeros(0), np.zeros(0))
        np.testing.assert_array_equal(w.mean, np.zeros(3))
        np.testing.assert_allclose(w.covariance(), np.eye(3))

    def test_point_mass_sample(self, rng):
        w = GaussianWeights.point(np.array([1.0, 2.0]))
        np.testing.assert_array_equal(w.sample(rng), [1.0, 2.0])

    def test_posterior_mean_function_matches_gp(self):
        h1 = Hyperparams(gamma=[[30.0]], P=[[300.0]], s=[[1.0]], m=[0.0], noise_var=0.1)
        rng = np.random.default_rng(2)
        X = np.linspace(0.05, 0.95, 6)[:, None]
        y = np.sin(6.0 * X[:, 0])
        obs = ObservationSet(X=X, idx=np.ones(6, dtype=int), y=y)
        gp = MixedGP(h1, obs)
        basis = draw_features(h1, 20_000, rng)
        mean_fn = FunctionSample(basis, model_weights(basis, gp).mean)
        xs = rng.uniform(size=(10, 1))
        np.testing.assert_allclose(mean_fn(xs, TARGET), gp.mean_var(xs, TARGET)[0],
                                   atol=0.05 * np.sqrt(h1.prior_var(1)))

    def test_size_mismatch(self, h1, rng):
        basis = draw_features(h1, 10, rng)
        with pytest.raises(ConfigurationError):
            sample_function(basis, GaussianWeights.prior(11), rng)


class TestMaximizer:
    def test_matches_dense_grid(self, h1):
        rng = np.random.default_rng(3)
        basis = draw_features(h1, 50, rng)
        sample = sample_function(basis, GaussianWeights.prior(basis.size), rng)
        bounds = np.array([[0.0, 1.0]])
        x = optimize_maximizer(sample, TARGET, bounds, rng)
        grid = np.linspace(0.0, 1.0, 10_000)[:, None]
        assert 0.0 <= x[0] <= 1.0
        assert sample(x, TARGET)[0] >= np.max(sample(grid, TARGET)) - 1e-6

    def test_batch(self, synthetic_state):
        gp, bounds = synthetic_state
        batch = sample_maximizers(gp, bounds, np.random.default_rng(4), n_samples=4, n_features=100, starts=3)
        assert batch.S == 4 and batch.M == 2
        assert batch.x_star.shape == (4, 2)
        assert np.all((batch.x_star >= 0.0) & (batch.x_star <= 1.0))
        np.testing.assert_array_equal(batch.x_out[:, 0], batch.x_star)
        np.testing.assert_allclose(batch.f_at_star[:, 0], batch.f_max[:, 0])
        assert batch.gaps[0] == 0.0
        assert batch.gaps[1] == pytest.approx(np.mean(batch.f_max[:, 1] - batch.f_at_star[:, 1]))

    def test_batch_is_reproducible(self, synthetic_state):
        gp, bounds = synthetic_state
        a = sample_maximizers(gp, bounds, np.random.default_rng(5), n_samples=2, n_features=50, starts=2)
        b = sample_maximizers(gp, bounds, np.random.default_rng(5), n_samples=2, n_features=50, starts=2)
        np.testing.assert_array_equal(a.x_star, b.x_star)
