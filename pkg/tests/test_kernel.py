import numpy as np
import pytest
from scipy import stats

from mixed_bo.errors import ConfigurationError
from mixed_bo.kernel import (
    TARGET,
    Hyperparams,
    InputTuple,
    ObservationSet,
    add_jitter,
    cov_arrays,
    cov_matrix,
    cross_cov,
    prior_mean,
    prior_var_arrays,
)


class TestInputTuple:
    def test_coerces_point_and_index(self):
        t = InputTuple(np.array([0.25, 0.5]), 2.0)
        assert t.x == (0.25, 0.5)
        assert t.i == 2
        assert t.d == 2

    def test_rejects_zero_index(self):
        with pytest.raises(ConfigurationError):
            InputTuple((0.1,), 0)

    def test_in_box(self):
        bounds = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert InputTuple((0.0, 1.0), 1).in_box(bounds)
        assert not InputTuple((0.5, 1.2), 1).in_box(bounds)


class TestHyperparams:
    def test_shapes(self, h2):
        assert (h2.d, h2.M, h2.Q) == (2, 2, 1)

    def test_arrays_are_read_only(self, h2):
        with pytest.raises(ValueError):
            h2.P[0, 0] = 1.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"s": [[1.0, 1.0], [1.0, 1.0]]},
            {"P": [[-1.0, 1.0], [1.0, 1.0]]},
            {"noise_var": 0.0},
            {"m": [0.0]},
        ],
    )
    def test_invalid(self, kwargs):
        base = {"gamma": [[1.0, 1.0]], "P": [[1.0, 1.0], [1.0, 1.0]], "s": [[1.0], [1.0]],
                "m": [0.0, 0.0], "noise_var": 1e-3}
        base.update(kwargs)
        with pytest.raises(ConfigurationError):
            Hyperparams(**base)

    def test_dict_round_trip(self, h2):
        back = Hyperparams.from_dict(h2.to_dict())
        for name in ("gamma", "P", "s", "m"):
            np.testing.assert_array_equal(getattr(back, name), getattr(h2, name))
        assert back.noise_var == h2.noise_var

    def test_from_dict_rejects_unknown_key(self, h2):
        d = h2.to_dict()
        d["lengthscale"] = 1.0
        with pytest.raises(ConfigurationError):
            Hyperparams.from_dict(d)

    def test_from_dict_checks_declared_sizes(self, h2):
        d = h2.to_dict()
        d["M"] = 3
        with pytest.raises(ConfigurationError):
            Hyperparams.from_dict(d)

    def test_subset_keeps_selected_outputs(self, h2):
        sub = h2.subset([2])
        assert sub.M == 1
        np.testing.assert_array_equal(sub.P[0], h2.P[1])
        assert sub.m[0] == h2.m[1]


class TestCovariance:
    def test_closed_form(self, h2):
        a = InputTuple((0.2, 0.4), 1)
        b = InputTuple((0.5, 0.1), 2)
        var = 1.0 / h2.gamma[0] + 1.0 / h2.P[0] + 1.0 / h2.P[1]
        diff = a.array - b.array
        expected = h2.s[0, 0] * h2.s[1, 0] * np.prod(stats.norm.pdf(diff, scale=np.sqrt(var)))
        assert cross_cov(h2, a, b) == pytest.approx(expected, rel=1e-12)

    def test_symmetric_positive_semidefinite(self, h2, rng):
        X = rng.uniform(size=(40, 2))
        idx = rng.integers(1, 3, size=40)
        K = cov_arrays(h2, X, idx, X, idx)
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        assert np.min(np.linalg.eigvalsh(K)) > -1e-10

    def test_prior_var_matches_diagonal(self, h2, rng):
        X = rng.uniform(size=(6, 2))
        idx = np.array([1, 2, 1, 2, 2, 1])
        K = cov_arrays(h2, X, idx, X, idx)
        np.testing.assert_allclose(np.diag(K), prior_var_arrays(h2, idx), rtol=1e-12)
        assert h2.prior_var(1) == pytest.approx(K[0, 0])

    def test_cov_matrix_matches_pairwise(self, h2):
        A = [InputTuple((0.1, 0.1), 1), InputTuple((0.6, 0.3), 2)]
        B = [InputTuple((0.2, 0.9), 2)]
        K = cov_matrix(h2, A, B)
        assert K.shape == (2, 1)
        assert K[1, 0] == pytest.approx(cross_cov(h2, A[1], B[0]))

    def test_stationary_under_common_shift(self, h2, rng):
        X = rng.uniform(0.0, 0.5, size=(8, 2))
        Xp = rng.uniform(0.0, 0.5, size=(8, 2))
        idx = np.array([1, 2, 2, 1, 1, 2, 1, 2])
        shift = np.array([0.4, 0.25])
        np.testing.assert_allclose(
            cov_arrays(h2, X + shift, idx, Xp + shift, idx[::-1]),
            cov_arrays(h2, X, idx, Xp, idx[::-1]),
            rtol=1e-12,
        )

    def test_scalar_index_broadcasts(self, h2, rng):
        X = rng.uniform(size=(5, 2))
        np.testing.assert_array_equal(cov_arrays(h2, X, 2, X, 1), cov_arrays(h2, X, [2] * 5, X, [1] * 5))

    def test_rejects_wrong_dimension(self, h2):
        with pytest.raises(ConfigurationError):
            cov_arrays(h2, np.zeros((1, 3)), 1, np.zeros((1, 3)), 1)

    def test_rejects_output_out_of_range(self, h2):
        with pytest.raises(ConfigurationError):
            prior_mean(h2, InputTuple((0.0, 0.0), 3))

    def test_jitter_scales_with_diagonal(self):
        K = np.diag([2.0, 4.0])
        J = add_jitter(K)
        np.testing.assert_allclose(np.diag(J) - np.diag(K), 4e-8)
        assert K[0, 0] == 2.0


class TestObservationSet:
    def test_rejects_non_label_auxiliary(self):
        with pytest.raises(ConfigurationError):
            ObservationSet(X=[[0.1]], idx=[2], y=[0.5])

    def test_rejects_duplicate_tuple(self):
        with pytest.raises(ConfigurationError):
            ObservationSet(X=[[0.1], [0.1 + 1e-12]], idx=[1, 1], y=[0.0, 1.0])

    def test_same_point_on_different_outputs_is_allowed(self):
        obs = ObservationSet(X=[[0.1], [0.1]], idx=[1, 2], y=[0.0, 1.0])
        assert len(obs) == 2

    def test_append_and_contains(self):
        obs = ObservationSet.empty(2)
        assert obs.y_max is None
        obs = obs.append(InputTuple((0.2, 0.3), 1), 1.5)
        obs = obs.append(InputTuple((0.4, 0.3), 2), -1.0)
        assert len(obs) == 2
        assert obs.y_max == 1.5
        assert obs.n_binary == 1
        assert obs.contains(InputTuple((0.2, 0.3), 1))
        assert not obs.contains(InputTuple((0.2, 0.3), 2))

    def test_restrict_reindexes(self, mixed_obs):
        aux = mixed_obs.restrict([2])
        assert len(aux) == 4
        assert set(aux.idx.tolist()) == {1}
        target = mixed_obs.restrict([TARGET])
        np.testing.assert_array_equal(target.y, [0.3, -0.4])

    def test_is_immutable(self, mixed_obs):
        with pytest.raises(ValueError):
            mixed_obs.y[0] = 2.0
