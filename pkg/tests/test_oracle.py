import numpy as np
import pytest
from scipy.stats import spearmanr

from mixed_bo.ep import MixedGP
from mixed_bo.errors import ConfigurationError
from mixed_bo.features import sample_maximizers
from mixed_bo.kernel import TARGET, Hyperparams, InputTuple, ObservationSet
from mixed_bo.oracle import (
    acquisition_state,
    binned_mixture,
    mixture_entropy,
    query_grid,
    rs_oracle_acquisition,
    rs_oracle_surface,
)
from mixed_bo.pes import MTPESAcquisition, gaussian_entropy

SMALL = dict(grid_side=12, bins=4)


class TestSurface:
    @pytest.mark.parametrize("i", [TARGET, 2])
    def test_information_gain_is_non_negative(self, synthetic_state, i):
        gp, bounds = synthetic_state
        x = query_grid(6)
        surface = rs_oracle_surface(gp, x, i, 3000, np.random.default_rng(0), bounds, **SMALL)
        assert surface.values.shape == (36,)
        assert np.all(surface.values >= -1e-12)
        assert surface.bins_used >= 1
        assert 0 <= surface.samples_excluded < 3000

    def test_single_tuple_matches_surface(self, synthetic_state):
        gp, bounds = synthetic_state
        t = InputTuple((0.4, 0.6), 2)
        a = rs_oracle_acquisition(gp, t, 2000, np.random.default_rng(1), bounds=bounds, **SMALL)
        b = rs_oracle_surface(gp, t.array[None, :], 2, 2000, np.random.default_rng(1), bounds, **SMALL)
        assert a == b.values[0]

    @pytest.mark.parametrize("i", [TARGET, 2])
    def test_decoupled_tuple_carries_no_information(self, synthetic_state, i):
        gp, bounds = synthetic_state
        far = np.array([[25.0, 25.0]])
        surface = rs_oracle_surface(gp, far, i, 2000, np.random.default_rng(4), bounds, **SMALL)
        assert surface.values[0] == pytest.approx(0.0, abs=1e-10)

    def test_rejects_high_dimension(self):
        h = Hyperparams(gamma=[[10.0] * 3], P=[[100.0] * 3], s=[[1.0]], m=[0.0], noise_var=1e-3)
        gp = MixedGP(h, ObservationSet.empty(3))
        with pytest.raises(ConfigurationError):
            rs_oracle_surface(gp, np.zeros((1, 3)), TARGET, 100, np.random.default_rng(0))


class TestMixtureEntropy:
    def test_single_component_is_gaussian(self):
        means = np.full((500, 2), 0.3)
        var = np.array([0.04, 0.5])
        flat, y, pdf = binned_mixture(means, var)
        got = mixture_entropy(flat, np.ones(500, dtype=bool), y, pdf)
        np.testing.assert_allclose(got, gaussian_entropy(var), atol=1e-6)

    def test_separated_modes_add_one_bit(self):
        means = np.repeat([[-2.0], [2.0]], 1000, axis=0)
        var = np.array([0.01])
        flat, y, pdf = binned_mixture(means, var)
        got = mixture_entropy(flat, np.ones(2000, dtype=bool), y, pdf)[0]
        assert got == pytest.approx(np.log(2.0) + float(gaussian_entropy(0.01)), abs=1e-4)
        # a moment-matched Gaussian would report the spread between the modes as noise
        assert got < float(gaussian_entropy(4.01)) - 1.0

    def test_union_is_at_least_the_average_of_its_parts(self, rng):
        means = np.concatenate([rng.normal(-1.0, 0.3, (600, 3)), rng.normal(1.5, 0.2, (400, 3))])
        var = np.array([0.02, 0.1, 0.3])
        flat, y, pdf = binned_mixture(means, var)
        first = np.arange(1000) < 600
        whole = mixture_entropy(flat, np.ones(1000, dtype=bool), y, pdf)
        parts = 0.6 * mixture_entropy(flat, first, y, pdf) + 0.4 * mixture_entropy(flat, ~first, y, pdf)
        assert np.all(whole >= parts - 1e-12)


def test_acquisition_state_counts():
    gp, bounds = acquisition_state(seed=1, n_target=3, n_aux=7)
    assert int(np.sum(gp.obs.target_mask)) == 3
    assert len(gp) == 10
    assert gp.obs.n_binary == 7
    np.testing.assert_array_equal(bounds, [[0.0, 1.0], [0.0, 1.0]])


@pytest.mark.slow
def test_mtpes_ranks_like_rejection_sampling():
    gp, bounds = acquisition_state(seed=0, n_target=5, n_aux=50)
    grid = query_grid(30)
    surface = rs_oracle_surface(gp, grid, 2, 20_000, np.random.default_rng(2), bounds)
    batch = sample_maximizers(gp, bounds, np.random.default_rng(3), n_samples=50, n_features=200)
    mtpes = MTPESAcquisition.precompute(gp, batch).evaluate(grid, 2)
    assert spearmanr(surface.values, mtpes).correlation > 0.7
