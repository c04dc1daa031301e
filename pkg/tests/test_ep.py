import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from mixed_bo.ep import (
    EP_TOL,
    MixedGP,
    SiteParams,
    approx_log_marginal,
    fit_sites,
    output_distribution,
    posterior,
    predict_output,
    probit_moments,
    site_from_moments,
)
from mixed_bo.errors import ConfigurationError
from mixed_bo.kernel import TARGET, InputTuple, ObservationSet, cov_arrays
from mixed_bo.validate import binary_site_hyperparams, check_probit_ep, probit_quadrature


class TestProbitMoments:
    @pytest.mark.parametrize("y,m,v", [(1.0, 0.0, 1.0), (-1.0, 0.5, 2.0), (1.0, -2.0, 0.3)])
    def test_match_quadrature(self, y, m, v):
        log_z, mean, var = probit_moments(y, m, v)
        z, q_mean, q_var = probit_quadrature(m, v, y)
        assert float(np.exp(log_z)) == pytest.approx(z, rel=1e-8)
        assert float(mean) == pytest.approx(q_mean, abs=1e-8)
        assert float(var) == pytest.approx(q_var, abs=1e-8)

    def test_stable_far_in_the_tail(self):
        log_z, mean, var = probit_moments(1.0, -40.0, 1.0)
        assert np.isfinite(log_z) and np.isfinite(mean) and np.isfinite(var)
        assert 0.0 < var < 1.0

    def test_site_reproduces_matched_moments(self):
        m_cav, v_cav = 0.2, 1.5
        _, mean, var = probit_moments(1.0, m_cav, v_cav)
        tau, nu = site_from_moments(m_cav, v_cav, mean, var)
        post_var = 1.0 / (1.0 / v_cav + tau)
        post_mean = post_var * (m_cav / v_cav + nu)
        assert post_var == pytest.approx(float(var))
        assert post_mean == pytest.approx(float(mean))

    def test_non_positive_precision_is_clamped(self):
        tau, nu = site_from_moments(0.0, 1.0, 0.3, 1.2)
        assert float(tau) == pytest.approx(1e-6)
        # the matched mean is kept: cavity times site has mean 0.3
        post_var = 1.0 / (1.0 + float(tau))
        assert post_var * float(nu) == pytest.approx(0.3)


class TestFitSites:
    def test_no_binary_observations(self, h2):
        obs = ObservationSet(X=[[0.1, 0.2]], idx=[1], y=[0.5])
        assert len(fit_sites(h2, obs)) == 0

    def test_converges(self, h2, mixed_obs):
        sites = fit_sites(h2, mixed_obs)
        assert sites.converged
        assert len(sites) == mixed_obs.n_binary
        assert np.all(sites.site_var > 0.0)
        assert np.all(np.isfinite(sites.site_lognorm))

    def test_site_means_follow_labels(self, h2):
        obs = ObservationSet(X=[[0.2, 0.2], [0.8, 0.8]], idx=[2, 2], y=[1.0, -1.0])
        sites = fit_sites(h2, obs)
        assert sites.site_mean[0] > h2.m[1] > sites.site_mean[1]

    def test_order_invariant(self, h2, mixed_obs):
        x = np.array([[0.35, 0.45], [0.6, 0.2]])
        mean_a, var_a = MixedGP(h2, mixed_obs).mean_var(x, 2)
        mean_b, var_b = MixedGP(h2, mixed_obs.permuted([5, 3, 1, 4, 0, 2])).mean_var(x, 2)
        np.testing.assert_allclose(mean_a, mean_b, atol=1e-4)
        np.testing.assert_allclose(var_a, var_b, atol=1e-4)

    def test_tolerance_default(self):
        assert EP_TOL == 1e-6


class TestQuadratureOracle:
    def test_single_site_grid(self):
        failed = [r for r in check_probit_ep() if not r.passed]
        assert not failed, [(r.name, r.error) for r in failed]

    def test_log_marginal_of_symmetric_site(self):
        h = binary_site_hyperparams(0.0, 1.0)
        obs = ObservationSet(X=[[0.0]], idx=[2], y=[1.0])
        assert approx_log_marginal(h, obs) == pytest.approx(np.log(0.5), abs=1e-3)


class TestMixedGP:
    def test_empty_data_is_the_prior(self, h2):
        gp = MixedGP(h2, ObservationSet.empty(2))
        mean, var = gp.mean_var(np.array([[0.3, 0.3]]), 2)
        assert mean[0] == h2.m[1]
        assert var[0] == pytest.approx(h2.prior_var(2))
        assert gp.log_marginal() == 0.0

    def test_target_only_is_gp_regression(self, h2, rng):
        X = rng.uniform(size=(8, 2))
        y = rng.normal(size=8)
        obs = ObservationSet(X=X, idx=np.ones(8, dtype=int), y=y)
        gp = MixedGP(h2, obs)
        xs = rng.uniform(size=(4, 2))
        K = cov_arrays(h2, X, 1, X, 1) + h2.noise_var * np.eye(8)
        Ks = cov_arrays(h2, xs, 1, X, 1)
        mean, var = gp.mean_var(xs, TARGET)
        np.testing.assert_allclose(mean, Ks @ np.linalg.solve(K, y), atol=1e-6)
        ref_var = h2.prior_var(1) - np.sum(Ks * np.linalg.solve(K, Ks.T).T, axis=1)
        np.testing.assert_allclose(var, ref_var, atol=1e-6)
        expected = stats.multivariate_normal(np.zeros(8), K).logpdf(y)
        assert gp.log_marginal() == pytest.approx(expected, abs=1e-4)

    def test_joint_agrees_with_marginals(self, mixed_gp, rng):
        x = rng.uniform(size=(5, 2))
        mean, var = mixed_gp.mean_var(x, 2)
        jm, jc = mixed_gp.joint(x, 2)
        np.testing.assert_allclose(jm, mean, atol=1e-12)
        np.testing.assert_allclose(np.diag(jc), var, atol=1e-10)
        np.testing.assert_allclose(jc, jc.T)

    def test_posterior_cross_matches_joint(self, mixed_gp):
        xa = np.array([[0.2, 0.5]])
        xb = np.array([[0.6, 0.4]])
        k = mixed_gp.posterior_cross(xa, 1, xb, 2)[0, 0]
        Z = [InputTuple(xa[0], 1), InputTuple(xb[0], 2)]
        belief = mixed_gp.belief(Z)
        assert k == pytest.approx(belief.cov[0, 1], abs=1e-12)

    def test_variance_shrinks_near_observations(self, mixed_gp):
        _, near = mixed_gp.mean_var(np.array([[0.1, 0.2]]), TARGET)
        _, far = mixed_gp.mean_var(np.array([[0.95, 0.95]]), TARGET)
        assert near[0] < far[0]

    def test_site_count_checked(self, h2, mixed_obs):
        with pytest.raises(ConfigurationError):
            MixedGP(h2, mixed_obs, SiteParams.empty())

    def test_dimension_checked(self, h2):
        obs = ObservationSet(X=[[0.1]], idx=[1], y=[0.0])
        with pytest.raises(ConfigurationError):
            MixedGP(h2, obs)


class TestPredictive:
    def test_binary_probability(self):
        dist = output_distribution(2, 0.4, 0.5, 1e-3)
        assert dist.is_binary
        assert dist.p == pytest.approx(float(ndtr(0.4 / np.sqrt(1.5))))

    def test_target_adds_noise(self):
        dist = output_distribution(TARGET, 0.4, 0.5, 1e-3)
        assert dist.p is None
        assert dist.var == pytest.approx(0.501)

    def test_predict_output_from_belief(self, h2, mixed_obs):
        sites = fit_sites(h2, mixed_obs)
        t = InputTuple((0.45, 0.55), 2)
        belief = posterior(h2, mixed_obs, sites, [InputTuple((0.1, 0.9), 1), t])
        dist = predict_output(belief, t, h2)
        mean, var = MixedGP(h2, mixed_obs, sites).mean_var(t.array[None, :], 2)
        assert dist.mean == pytest.approx(mean[0])
        assert dist.p == pytest.approx(float(ndtr(mean[0] / np.sqrt(1.0 + var[0]))))

    def test_unknown_tuple_in_belief(self, mixed_gp):
        belief = mixed_gp.belief([InputTuple((0.1, 0.9), 1)])
        with pytest.raises(ConfigurationError):
            belief.index_of(InputTuple((0.1, 0.9), 2))
