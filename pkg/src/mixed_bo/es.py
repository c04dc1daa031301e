"""Mixed-type entropy search over an EI-pruned candidate set.

The information about the target maximizer is measured by the entropy of
the argmax histogram of joint posterior draws over ``k`` candidates.  A
fantasized observation at ``<x, i>`` updates the candidate Gaussian in
closed form: a Gaussian observation for the target, or the Gaussian site
a single EP step would give the new probit label for an auxiliary.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.special import entr, ndtr

from .ep import MixedGP, norm_logpdf, probit_moments, site_from_moments
from .errors import ConfigurationError, NumericalError
from .kernel import JITTER, TARGET, InputTuple, cov_arrays
from .search import sobol_points

logger = logging.getLogger(__name__)

N_CANDIDATES = 30
N_DRAWS = 200
N_OUTER = 10
GRID_POINTS = 2000


def ei_target(mu, sigma, y_max: float, xi: float = 0.0):
    """Expected improvement of ``N(mu, sigma^2)`` over ``y_max + xi``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = mu - y_max - xi
    pos = sigma > 0.0
    safe = np.where(pos, sigma, 1.0)
    z = imp / safe
    ei = np.where(pos, imp * ndtr(z) + safe * np.exp(norm_logpdf(z)), np.maximum(imp, 0.0))
    return float(ei) if ei.ndim == 0 else ei


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Target-maximizer candidates with their posterior mean, std and EI."""

    points: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    ei: np.ndarray

    @property
    def k(self) -> int:
        return int(self.points.shape[0])


def candidate_pool(gp: MixedGP, grid: np.ndarray, k: int = N_CANDIDATES, xi: float = 0.0) -> CandidateSet:
    """The ``k`` grid points with the highest target EI, ties to the lower index."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if k < 2:
        raise ConfigurationError(f"need at least 2 candidates, got {k}")
    if grid.shape[0] < k:
        raise ConfigurationError(f"grid has {grid.shape[0]} points, fewer than k={k}")
    mean, var = gp.mean_var(grid, TARGET)
    std = np.sqrt(var)
    y_max = gp.obs.y_max
    ei = ei_target(mean, std, y_max if y_max is not None else float(np.max(mean)), xi)
    order = np.argsort(-ei, kind="stable")[:k]
    return CandidateSet(points=grid[order], mean=mean[order], std=std[order], ei=ei[order])


def _factor(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with jitter, retried once with a larger jitter."""
    scale = max(float(np.max(np.diag(cov))), 1e-300)
    for jitter in (JITTER, 1e3 * JITTER):
        try:
            return cholesky(cov + jitter * scale * np.eye(cov.shape[0]), lower=True)
        except LinAlgError:
            continue
    raise NumericalError("candidate covariance is not positive definite")


def argmax_entropy(mean: np.ndarray, cov: np.ndarray, z: np.ndarray) -> float:
    """Shannon entropy of the argmax histogram of ``mean + L z`` draws."""
    draws = mean[None, :] + z @ _factor(cov).T
    counts = np.bincount(np.argmax(draws, axis=1), minlength=mean.size)
    return float(np.sum(entr(counts / draws.shape[0])))


def pxstar_entropy(
    gp: MixedGP, candidates: CandidateSet, n_draws: int, rng: np.random.Generator
) -> float:
    if n_draws < 1:
        raise ConfigurationError(f"n_draws must be >= 1, got {n_draws}")
    mean, cov = gp.joint(candidates.points, TARGET)
    return argmax_entropy(mean, cov, rng.standard_normal((n_draws, candidates.k)))


class MTESAcquisition:
    """Per-iteration MT-ES state: candidate Gaussian and common random numbers."""

    def __init__(
        self,
        gp: MixedGP,
        candidates: CandidateSet,
        z: np.ndarray,
        n_outer: int = N_OUTER,
    ):
        self.gp = gp
        self.candidates = candidates
        self.z = z
        self.mean, self.cov = gp.joint(candidates.points, TARGET)
        self.base_entropy = argmax_entropy(self.mean, self.cov, z)
        self.gh_nodes, self.gh_weights = np.polynomial.hermite.hermgauss(n_outer)
        if len(gp):
            self._V_c = gp.whiten(gp.cross_to_data(candidates.points, TARGET))

    @classmethod
    def precompute(
        cls,
        gp: MixedGP,
        grid: np.ndarray,
        rng: np.random.Generator,
        k: int = N_CANDIDATES,
        n_draws: int = N_DRAWS,
        n_outer: int = N_OUTER,
        xi: float = 0.0,
    ) -> "MTESAcquisition":
        candidates = candidate_pool(gp, grid, k, xi)
        return cls(gp, candidates, rng.standard_normal((n_draws, candidates.k)), n_outer)

    def _moments(self, x: np.ndarray, i: int) -> Tuple[float, float, np.ndarray]:
        """Latent mean/variance at ``<x, i>`` and its covariance with the candidates."""
        gp = self.gp
        mean, var = gp.mean_var(x[None, :], i)
        k = cov_arrays(gp.h, self.candidates.points, TARGET, x[None, :], i)[:, 0]
        if len(gp):
            k = k - self._V_c.T @ gp.whiten(gp.cross_to_data(x[None, :], i))[:, 0]
        return float(mean[0]), float(var[0]), k

    def _conditioned_entropy(self, k: np.ndarray, m_t: float, y_obs: float, total_var: float) -> float:
        mean = self.mean + k * (y_obs - m_t) / total_var
        cov = self.cov - np.outer(k, k) / total_var
        return argmax_entropy(mean, cov, self.z)

    def value(self, x: np.ndarray, i: int) -> float:
        x = np.asarray(x, dtype=float)
        m_t, v_t, k = self._moments(x, i)
        if i == TARGET:
            total = v_t + self.gp.h.noise_var
            ys = m_t + np.sqrt(2.0 * total) * self.gh_nodes
            weights = self.gh_weights / np.sqrt(np.pi)
            expected = sum(
                w * self._conditioned_entropy(k, m_t, y, total) for w, y in zip(weights, ys)
            )
            return self.base_entropy - float(expected)

        p = float(ndtr(m_t / np.sqrt(1.0 + v_t)))
        if p <= 0.0 or p >= 1.0:
            return 0.0
        v_cav = max(v_t, 1e-12)
        expected = 0.0
        for label, weight in ((1.0, p), (-1.0, 1.0 - p)):
            _, m_hat, v_hat = probit_moments(label, m_t, v_cav)
            tau, nu = site_from_moments(m_t, v_cav, m_hat, v_hat)
            site_var, site_mean = 1.0 / float(tau), float(nu) / float(tau)
            expected += weight * self._conditioned_entropy(k, m_t, site_mean, v_t + site_var)
        return self.base_entropy - expected

    def evaluate(self, x: np.ndarray, i: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.array([self.value(row, i) for row in x])

    def __call__(self, t: InputTuple) -> float:
        return self.value(t.array, t.i)


def es_acquisition(
    gp: MixedGP,
    t: InputTuple,
    candidates: CandidateSet,
    n_outer: int,
    n_draws: int,
    rng: np.random.Generator,
) -> float:
    if gp.obs.contains(t):
        raise ConfigurationError(f"{t} is already observed")
    z = rng.standard_normal((n_draws, candidates.k))
    return MTESAcquisition(gp, candidates, z, n_outer)(t)


def default_grid(bounds: np.ndarray, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    return sobol_points(bounds, GRID_POINTS if n is None else n, rng)
