"""Mixed-type random features and analytic posterior function samples.

The latent kernel ``N(x - x' | 0, Gamma_q^-1)`` equals ``alpha_q`` times the
characteristic function of ``N(w | 0, Gamma_q)`` with
``alpha_q = N(0 | 0, Gamma_q^-1)``, so with ``w ~ N(0, Gamma_q)`` and
``b ~ U[0, 2 pi)`` the features ``sqrt(2 alpha_q / m) cos(W x + b)`` give an
unbiased kernel estimate.  Smoothing by ``P_i`` multiplies each feature by
``exp(-0.5 w^T P_i^-1 w)`` and the amplitude ``s[i, q]``; stacking over
``q`` yields the length ``Q m`` feature vector of output ``i``.

Posterior weights follow the Bayesian linear model with diagonal noise
``Lambda - Sigma_XX``.  When ``Q m`` exceeds the number of observations
the Woodbury form is used for both the mean and the samples.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import ConfigurationError, NumericalError
from .ep import MixedGP, SiteParams
from .kernel import TARGET, Hyperparams, ObservationSet

logger = logging.getLogger(__name__)

DEFAULT_FEATURES = 200
DEFAULT_SAMPLES = 50
DEFAULT_STARTS = 10
MAXIMIZER_ITERS = 200
MAXIMIZER_GTOL = 1e-8


# ─── Feature basis ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FeatureBasis:
    """Spectral frequencies ``W`` (Q, m, d), phases ``B`` (Q, m) and ``alpha`` (Q,)."""

    W: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    h: Hyperparams

    @property
    def Q(self) -> int:
        return int(self.W.shape[0])

    @property
    def m(self) -> int:
        return int(self.W.shape[1])

    @property
    def d(self) -> int:
        return int(self.W.shape[2])

    @property
    def size(self) -> int:
        return self.Q * self.m


def draw_features(h: Hyperparams, m: int, rng: np.random.Generator) -> FeatureBasis:
    if m < 1:
        raise ConfigurationError(f"feature count must be >= 1, got {m}")
    W = rng.standard_normal((h.Q, m, h.d)) * np.sqrt(h.gamma)[:, None, :]
    B = rng.uniform(0.0, 2.0 * np.pi, size=(h.Q, m))
    alpha = (2.0 * np.pi) ** (-0.5 * h.d) * np.sqrt(np.prod(h.gamma, axis=1))
    return FeatureBasis(W=W, B=B, alpha=alpha, h=h)


def _parts(basis: FeatureBasis, h: Hyperparams, x: np.ndarray, idx: np.ndarray):
    """Per-feature amplitude (n, Q, m) and phase argument (n, Q, m)."""
    if x.shape[1] != basis.d:
        raise ConfigurationError(f"points have dimension {x.shape[1]}, basis expects {basis.d}")
    proj = np.einsum("nd,qmd->nqm", x, basis.W) + basis.B[None, :, :]
    damp = np.exp(-0.5 * np.einsum("qmd,nd->nqm", basis.W ** 2, 1.0 / h.P[idx - 1]))
    scale = np.sqrt(2.0 * basis.alpha / basis.m)
    amp = h.s[idx - 1][:, :, None] * scale[None, :, None] * damp
    return amp, proj


def _as_rows(x: np.ndarray, i) -> tuple:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    idx = np.broadcast_to(np.asarray(i, dtype=int), (x.shape[0],))
    return x, idx


def feature_matrix(basis: FeatureBasis, h: Hyperparams, x: np.ndarray, i) -> np.ndarray:
    """``(n, Q m)`` stacked features for rows of ``x`` on output(s) ``i``."""
    x, idx = _as_rows(x, i)
    amp, proj = _parts(basis, h, x, idx)
    return (amp * np.cos(proj)).reshape(x.shape[0], basis.size)


def feature_jacobian(basis: FeatureBasis, h: Hyperparams, x: np.ndarray, i) -> np.ndarray:
    """``(n, Q m, d)`` derivative of ``feature_matrix`` with respect to ``x``."""
    x, idx = _as_rows(x, i)
    amp, proj = _parts(basis, h, x, idx)
    dphi = -(amp * np.sin(proj))[..., None] * basis.W[None, :, :, :]
    return dphi.reshape(x.shape[0], basis.size, basis.d)


def output_features(basis: FeatureBasis, h: Hyperparams, i: int, x: np.ndarray) -> np.ndarray:
    return feature_matrix(basis, h, np.asarray(x, dtype=float)[None, :], i)[0]


# ─── Weight posterior ─────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GaussianWeights:
    """Weight posterior ``N(mean, A^-1)``.

    Stored either as the lower Cholesky factor of ``A`` (dense regime), or
    as the features, noise and Cholesky factor of ``D + Phi Phi^T``
    (Woodbury regime).  With neither present the weights are a point mass.
    """

    mean: np.ndarray
    chol_A: Optional[np.ndarray] = None
    Phi: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    chol_K: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.mean.size)

    @classmethod
    def prior(cls, size: int) -> "GaussianWeights":
        return cls(mean=np.zeros(size), chol_A=np.eye(size))

    @classmethod
    def point(cls, mean: np.ndarray) -> "GaussianWeights":
        return cls(mean=np.asarray(mean, dtype=float))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.chol_A is not None:
            z = rng.standard_normal(self.size)
            return self.mean + solve_triangular(self.chol_A, z, lower=True, trans="T")
        if self.chol_K is not None:
            z = rng.standard_normal(self.size)
            eps = rng.standard_normal(self.noise.size) * np.sqrt(self.noise)
            corr = cho_solve((self.chol_K, True), self.Phi @ z + eps)
            return self.mean + z - self.Phi.T @ corr
        return self.mean.copy()

    def covariance(self) -> np.ndarray:
        if self.chol_A is not None:
            return cho_solve((self.chol_A, True), np.eye(self.size))
        if self.chol_K is not None:
            V = solve_triangular(self.chol_K, self.Phi, lower=True)
            return np.eye(self.size) - V.T @ V
        return np.zeros((self.size, self.size))


def weights_from_data(Phi: np.ndarray, noise: np.ndarray, resid: np.ndarray) -> GaussianWeights:
    """Posterior of ``theta ~ N(0, I)`` given ``resid = Phi theta + N(0, diag(noise))``."""
    n, size = Phi.shape
    if n == 0:
        return GaussianWeights.prior(size)
    if np.any(~(noise > 0.0)):
        bad = int(np.flatnonzero(~(noise > 0.0))[0])
        raise NumericalError("non-positive observation noise in weight posterior", index=bad)
    try:
        if size <= n:
            Pd = Phi / noise[:, None]
            A = Phi.T @ Pd
            A[np.diag_indices_from(A)] += 1.0
            L, _ = cho_factor(A, lower=True)
            mean = cho_solve((L, True), Pd.T @ resid)
            return GaussianWeights(mean=mean, chol_A=np.tril(L))
        K = Phi @ Phi.T
        K[np.diag_indices_from(K)] += noise
        L, _ = cho_factor(K, lower=True)
        mean = Phi.T @ cho_solve((L, True), resid)
        return GaussianWeights(mean=mean, Phi=Phi, noise=noise, chol_K=np.tril(L))
    except LinAlgError as exc:
        raise NumericalError(f"weight posterior not positive definite: {exc}") from exc


def posterior_weights(
    basis: FeatureBasis, h: Hyperparams, obs: ObservationSet, sites: SiteParams
) -> GaussianWeights:
    if len(obs) == 0:
        return GaussianWeights.prior(basis.size)
    noise = np.where(obs.target_mask, h.noise_var, 0.0)
    y_tilde = obs.y.copy()
    if obs.n_binary:
        noise[obs.binary_mask] = sites.site_var
        y_tilde[obs.binary_mask] = sites.site_mean
    Phi = feature_matrix(basis, h, obs.X, obs.idx)
    return weights_from_data(Phi, noise, y_tilde - h.m[obs.idx - 1])


def model_weights(basis: FeatureBasis, gp: MixedGP) -> GaussianWeights:
    """Weight posterior for an already fitted model."""
    if len(gp) == 0:
        return GaussianWeights.prior(basis.size)
    Phi = feature_matrix(basis, gp.h, gp.obs.X, gp.obs.idx)
    return weights_from_data(Phi, gp.noise, gp.resid)


# ─── Function samples ─────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FunctionSample:
    """``f_i(x) = m_i + Phi_i(x)^T theta`` for every output ``i``."""

    basis: FeatureBasis
    theta: np.ndarray

    @property
    def h(self) -> Hyperparams:
        return self.basis.h

    def __call__(self, x: np.ndarray, i: int = TARGET) -> np.ndarray:
        x, idx = _as_rows(x, i)
        return self.h.m[idx - 1] + feature_matrix(self.basis, self.h, x, idx) @ self.theta

    def grad(self, x: np.ndarray, i: int = TARGET) -> np.ndarray:
        return np.einsum("nkd,k->nd", feature_jacobian(self.basis, self.h, x, i), self.theta)


def sample_function(
    basis: FeatureBasis, weights: GaussianWeights, rng: np.random.Generator
) -> FunctionSample:
    if weights.size != basis.size:
        raise ConfigurationError(f"weights have size {weights.size}, basis has {basis.size}")
    return FunctionSample(basis=basis, theta=weights.sample(rng))


def optimize_maximizer(
    sample: FunctionSample,
    i: int,
    bounds: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    starts: int = DEFAULT_STARTS,
) -> np.ndarray:
    """Best of ``starts`` bounded L-BFGS-B ascents from Latin-hypercube starts.

    Starts are the best ``starts`` points of a ``100 d`` Latin-hypercube
    design.  The returned point is never worse than any start.
    """
    bounds = np.asarray(bounds, dtype=float)
    d = bounds.shape[0]
    rng = np.random.default_rng() if rng is None else rng
    lhs = qmc.LatinHypercube(d=d, seed=rng).random(max(starts, 100 * d))
    pool = qmc.scale(lhs, bounds[:, 0], bounds[:, 1])
    values = sample(pool, i)
    order = np.argsort(-values, kind="stable")[:starts]

    best_x, best_v = pool[order[0]].copy(), float(values[order[0]])

    def neg(z: np.ndarray):
        return -float(sample(z, i)[0]), -sample.grad(z, i)[0]

    for k in order:
        res = minimize(
            neg, pool[k], jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": MAXIMIZER_ITERS, "gtol": MAXIMIZER_GTOL},
        )
        x = np.clip(res.x, bounds[:, 0], bounds[:, 1])
        v = float(sample(x, i)[0])
        if np.isfinite(v) and v > best_v:
            best_x, best_v = x, v
    return best_x


# ─── Maximizer batch ──────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class MaximizerBatch:
    """``S`` sampled maximizers of every output with the slack gaps.

    x_star:    (S, d) target maximizers.
    x_out:     (S, M, d) maximizers of each output (``x_out[:, 0] == x_star``).
    f_max:     (S, M) ``f_j(x*_j)`` per sample.
    f_at_star: (S, M) ``f_j(x*)`` per sample.
    gaps:      (M,) Monte Carlo slack gaps, ``gaps[0] == 0``.
    """

    x_star: np.ndarray
    x_out: np.ndarray
    f_max: np.ndarray
    f_at_star: np.ndarray
    gaps: np.ndarray
    samples: List[FunctionSample] = field(default_factory=list)

    @property
    def S(self) -> int:
        return int(self.x_star.shape[0])

    @property
    def M(self) -> int:
        return int(self.f_max.shape[1])


def estimate_gaps(samples: Sequence[FunctionSample], maximizers: MaximizerBatch) -> np.ndarray:
    """Mean over samples of ``f_j(x*_j) - f_j(x*)``; the target entry is exactly 0."""
    if not len(samples):
        return np.zeros(maximizers.M)
    f_max = np.empty((len(samples), maximizers.M))
    f_star = np.empty_like(f_max)
    for s, sample in enumerate(samples):
        for j in range(1, maximizers.M + 1):
            f_max[s, j - 1] = sample(maximizers.x_out[s, j - 1], j)[0]
            f_star[s, j - 1] = sample(maximizers.x_star[s], j)[0]
    gaps = np.mean(f_max - f_star, axis=0)
    gaps[0] = 0.0
    return gaps


def sample_maximizers(
    gp: MixedGP,
    bounds: np.ndarray,
    rng: np.random.Generator,
    n_samples: int = DEFAULT_SAMPLES,
    n_features: int = DEFAULT_FEATURES,
    starts: int = DEFAULT_STARTS,
) -> MaximizerBatch:
    """Draw ``n_samples`` posterior functions (fresh basis each) and maximize every output."""
    h = gp.h
    samples: List[FunctionSample] = []
    for child in rng.spawn(n_samples):
        basis = draw_features(h, n_features, child)
        samples.append(sample_function(basis, model_weights(basis, gp), child))

    S, M, d = n_samples, h.M, h.d
    x_out = np.empty((S, M, d))
    f_max = np.empty((S, M))
    f_star = np.empty((S, M))
    for s, sample in enumerate(samples):
        opt_rng = np.random.default_rng(rng.integers(2 ** 63))
        for j in range(1, M + 1):
            x_out[s, j - 1] = optimize_maximizer(sample, j, bounds, opt_rng, starts)
            f_max[s, j - 1] = sample(x_out[s, j - 1], j)[0]
        for j in range(1, M + 1):
            f_star[s, j - 1] = sample(x_out[s, 0], j)[0]

    batch = MaximizerBatch(
        x_star=x_out[:, 0].copy(), x_out=x_out, f_max=f_max, f_at_star=f_star,
        gaps=np.zeros(M), samples=samples,
    )
    gaps = estimate_gaps(samples, batch)
    logger.debug("Sampled %d maximizers, gaps=%s", S, np.round(gaps, 4).tolist())
    return MaximizerBatch(
        x_star=batch.x_star, x_out=x_out, f_max=f_max, f_at_star=f_star, gaps=gaps, samples=samples,
    )
