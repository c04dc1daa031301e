"""Expectation propagation for the probit sites and the mixed predictive posterior.

Target observations enter the joint latent Gaussian as exact Gaussian
sites ``N(y | f, noise_var)``; every binary observation gets a Gaussian
site ``N(site_mean | f, site_var)`` refined by EP.  Once the sites are
fixed the posterior over any query set follows from a single
factorization of

    Lambda = Sigma_XX + diag(noise_var on target rows, site_var on binary rows)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.special import log_ndtr, ndtr

from .errors import ConfigurationError, NumericalError
from .kernel import (
    TARGET,
    Hyperparams,
    InputTuple,
    ObservationSet,
    add_jitter,
    cov_arrays,
    prior_var_arrays,
    stack_tuples,
)

logger = logging.getLogger(__name__)

EP_TOL = 1e-6
EP_MAX_SWEEPS = 100
EP_DAMPING = 0.8

# Site variance used for near-flat sites (negative precision clamp).
SITE_VAR_MAX = 1e6

_LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))


# ─── Probit moments ───────────────────────────────────────────────────────────

def norm_logpdf(z: np.ndarray) -> np.ndarray:
    return -0.5 * np.square(z) - _LOG_SQRT_2PI


def inv_mills(z: np.ndarray) -> np.ndarray:
    """phi(z) / Phi(z), stable far into the left tail."""
    return np.exp(norm_logpdf(z) - log_ndtr(z))


def probit_moments(
    y: np.ndarray, m: np.ndarray, v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log normalizer, mean and variance of ``N(f | m, v) * Phi(y f)``."""
    y, m, v = np.broadcast_arrays(
        np.asarray(y, dtype=float), np.asarray(m, dtype=float), np.asarray(v, dtype=float)
    )
    root = np.sqrt(1.0 + v)
    z = y * m / root
    r = inv_mills(z)
    log_z = log_ndtr(z)
    mean = m + y * v * r / root
    var = v - np.square(v) * r * (z + r) / (1.0 + v)
    return log_z, mean, var


def site_from_moments(
    m_cav: np.ndarray, v_cav: np.ndarray, mean: np.ndarray, var: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Natural site parameters ``(tau, nu)`` turning the cavity into the matched moments.

    A non-positive site precision is replaced by ``1 / SITE_VAR_MAX`` while
    keeping the matched mean.
    """
    tau = 1.0 / var - 1.0 / v_cav
    tau = np.where(tau > 0.0, tau, 1.0 / SITE_VAR_MAX)
    nu = mean * tau + (mean - m_cav) / v_cav
    return tau, nu


def site_lognorm(
    log_z: np.ndarray, m_cav: np.ndarray, v_cav: np.ndarray, mu: np.ndarray, s2: np.ndarray
) -> np.ndarray:
    """log Z~ so that the Gaussian site reproduces the tilted normalizer."""
    tot = v_cav + s2
    return log_z + 0.5 * np.log(2.0 * np.pi * tot) + np.square(m_cav - mu) / (2.0 * tot)


# ─── Result types ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SiteParams:
    """Gaussian site approximations, one per binary observation in order."""

    site_mean: np.ndarray
    site_var: np.ndarray
    site_lognorm: np.ndarray
    converged: bool = True
    sweeps: int = 0

    def __post_init__(self) -> None:
        for name in ("site_mean", "site_var", "site_lognorm"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.site_mean.size == self.site_var.size == self.site_lognorm.size):
            raise ConfigurationError("site arrays disagree in length")

    @classmethod
    def empty(cls) -> "SiteParams":
        return cls(site_mean=np.zeros(0), site_var=np.zeros(0), site_lognorm=np.zeros(0))

    def __len__(self) -> int:
        return int(self.site_mean.size)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Joint Gaussian over the latent values of the query tuples ``(X, idx)``."""

    X: np.ndarray
    idx: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    @property
    def variances(self) -> np.ndarray:
        return np.maximum(np.diag(self.cov), 0.0)

    def index_of(self, t: InputTuple, tol: float = 1e-10) -> int:
        hits = np.flatnonzero(
            (self.idx == t.i) & (np.max(np.abs(self.X - t.array[None, :]), axis=1) < tol)
        )
        if hits.size == 0:
            raise ConfigurationError(f"tuple {t} is not part of this belief")
        return int(hits[0])

    def marginal(self, k: int) -> Tuple[float, float]:
        return float(self.mean[k]), float(max(self.cov[k, k], 0.0))


@dataclass(frozen=True)
class OutputDistribution:
    """Predictive distribution of one observation ``y_i(x)``.

    Gaussian ``(mean, var)`` for the target, Bernoulli ``p = p(y_i = 1)``
    for auxiliaries.
    """

    i: int
    mean: float = 0.0
    var: float = 1.0
    p: Optional[float] = None

    @property
    def is_binary(self) -> bool:
        return self.i != TARGET


# ─── EP ───────────────────────────────────────────────────────────────────────

def gaussian_with_sites(
    K: np.ndarray, mu0: np.ndarray, tau: np.ndarray, nu: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior ``(Sigma, mean)`` of ``N(mu0, K)`` times the sites ``(tau, nu)``."""
    sq = np.sqrt(tau)
    B = np.eye(K.shape[0]) + sq[:, None] * K * sq[None, :]
    try:
        L = cho_factor(B, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"EP system not positive definite: {exc}") from exc
    V = solve_triangular(L[0], sq[:, None] * K, lower=True)
    Sigma = K - V.T @ V
    mean = Sigma @ nu + mu0 - K @ (sq * cho_solve(L, sq * mu0))
    return Sigma, mean


def fit_sites(
    h: Hyperparams,
    obs: ObservationSet,
    tol: float = EP_TOL,
    max_sweeps: int = EP_MAX_SWEEPS,
    damping: float = EP_DAMPING,
) -> SiteParams:
    """Run EP on the probit sites of ``obs`` with the target rows as exact sites."""
    n_bin = obs.n_binary
    if n_bin == 0:
        return SiteParams.empty()

    K = add_jitter(cov_arrays(h, obs.X, obs.idx, obs.X, obs.idx))
    mu0 = h.m[obs.idx - 1]
    target = obs.target_mask
    binary = np.flatnonzero(obs.binary_mask)
    labels = obs.y[binary]

    tau = np.zeros(len(obs))
    nu = np.zeros(len(obs))
    tau[target] = 1.0 / h.noise_var
    nu[target] = obs.y[target] / h.noise_var

    Sigma, mean = gaussian_with_sites(K, mu0, tau, nu)
    prev_mu = np.zeros(n_bin)
    prev_s2 = np.full(n_bin, np.inf)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for pos, k in enumerate(binary):
            skk = Sigma[k, k]
            tau_cav = 1.0 / skk - tau[k]
            nu_cav = mean[k] / skk - nu[k]
            if not np.isfinite(tau_cav) or not np.isfinite(nu_cav):
                raise NumericalError("non-finite cavity", index=pos)
            if tau_cav <= 0.0:
                logger.debug("Skipping site %d with non-positive cavity precision", pos)
                continue
            m_cav, v_cav = nu_cav / tau_cav, 1.0 / tau_cav
            _, m_hat, v_hat = probit_moments(labels[pos], m_cav, v_cav)
            if not (np.isfinite(m_hat) and np.isfinite(v_hat)) or v_hat <= 0.0:
                raise NumericalError("non-finite tilted moment", index=pos)
            tau_new, nu_new = site_from_moments(m_cav, v_cav, m_hat, v_hat)
            tau_new = damping * float(tau_new) + (1.0 - damping) * tau[k]
            nu_new = damping * float(nu_new) + (1.0 - damping) * nu[k]
            d_tau, d_nu = tau_new - tau[k], nu_new - nu[k]
            tau[k], nu[k] = tau_new, nu_new
            col = Sigma[:, k].copy()
            denom = 1.0 + d_tau * skk
            Sigma -= (d_tau / denom) * np.outer(col, col)
            mean += col * (d_nu - d_tau * mean[k]) / denom

        Sigma, mean = gaussian_with_sites(K, mu0, tau, nu)
        s2 = 1.0 / np.maximum(tau[binary], 1.0 / SITE_VAR_MAX)
        mu = nu[binary] * s2
        delta = max(
            float(np.max(np.abs(mu - prev_mu))),
            float(np.max(np.abs(s2 - prev_s2) / np.maximum(1.0, s2))),
        )
        prev_mu, prev_s2 = mu, s2
        if delta < tol:
            converged = True
            break

    if not converged:
        logger.warning("EP did not converge in %d sweeps (%d binary sites)", max_sweeps, n_bin)

    d = np.diag(Sigma)[binary]
    tau_b = np.maximum(tau[binary], 1.0 / SITE_VAR_MAX)
    tau_cav = 1.0 / d - tau_b
    tau_cav = np.where(tau_cav > 0.0, tau_cav, 1.0 / SITE_VAR_MAX)
    nu_cav = mean[binary] / d - nu[binary]
    m_cav, v_cav = nu_cav / tau_cav, 1.0 / tau_cav
    s2 = 1.0 / tau_b
    mu = nu[binary] * s2
    log_z, _, _ = probit_moments(labels, m_cav, v_cav)
    lognorm = site_lognorm(log_z, m_cav, v_cav, mu, s2)
    if not np.all(np.isfinite(lognorm)):
        bad = int(np.flatnonzero(~np.isfinite(lognorm))[0])
        raise NumericalError("non-finite site normalizer", index=bad)
    return SiteParams(site_mean=mu, site_var=s2, site_lognorm=lognorm, converged=converged, sweeps=sweeps)


# ─── Fitted model ─────────────────────────────────────────────────────────────

class MixedGP:
    """Hyperparameters, observations and EP sites with ``Lambda`` factorized once.

    All predictive quantities of the package are computed from this object.
    """

    def __init__(self, h: Hyperparams, obs: ObservationSet, sites: Optional[SiteParams] = None):
        if len(obs) and obs.d != h.d:
            raise ConfigurationError(f"observations have dimension {obs.d}, model expects {h.d}")
        if len(obs) and obs.idx.max() > h.M:
            raise ConfigurationError(f"observation on output {obs.idx.max()} but M={h.M}")
        self.h = h
        self.obs = obs
        self.sites = fit_sites(h, obs) if sites is None else sites
        if len(self.sites) != obs.n_binary:
            raise ConfigurationError("site count does not match binary observation count")

        n = len(obs)
        self.noise = np.zeros(n)
        self.y_tilde = obs.y.copy()
        self.noise[obs.target_mask] = h.noise_var
        self.noise[obs.binary_mask] = self.sites.site_var
        self.y_tilde[obs.binary_mask] = self.sites.site_mean
        self.resid = self.y_tilde - h.m[obs.idx - 1] if n else np.zeros(0)
        if n:
            lam = add_jitter(cov_arrays(h, obs.X, obs.idx, obs.X, obs.idx) + np.diag(self.noise))
            try:
                self.chol = cho_factor(lam, lower=True)
            except LinAlgError as exc:
                raise NumericalError(f"Lambda not positive definite: {exc}") from exc
            self.alpha = cho_solve(self.chol, self.resid)
        else:
            self.chol = None
            self.alpha = np.zeros(0)

    @classmethod
    def fit(cls, h: Hyperparams, obs: ObservationSet) -> "MixedGP":
        return cls(h, obs)

    def __len__(self) -> int:
        return len(self.obs)

    def cross_to_data(self, x: np.ndarray, i) -> np.ndarray:
        """``Sigma_ZX`` for query points ``x`` on output(s) ``i``."""
        return cov_arrays(self.h, x, i, self.obs.X, self.obs.idx)

    def whiten(self, Kzx: np.ndarray) -> np.ndarray:
        """``L^-1 Sigma_XZ`` with ``L`` the lower Cholesky factor of Lambda."""
        return solve_triangular(self.chol[0], Kzx.T, lower=True)

    def mean_var(self, x: np.ndarray, i) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior latent mean and variance at each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.broadcast_to(np.asarray(i, dtype=int), (x.shape[0],))
        mean = self.h.m[idx - 1].astype(float)
        var = prior_var_arrays(self.h, idx)
        if len(self):
            Kzx = self.cross_to_data(x, idx)
            mean = mean + Kzx @ self.alpha
            V = self.whiten(Kzx)
            var = var - np.sum(V * V, axis=0)
        return mean, np.maximum(var, 0.0)

    def joint(self, x: np.ndarray, i) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior latent mean vector and covariance matrix over the rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.broadcast_to(np.asarray(i, dtype=int), (x.shape[0],))
        mean = self.h.m[idx - 1].astype(float)
        cov = cov_arrays(self.h, x, idx, x, idx)
        if len(self):
            Kzx = self.cross_to_data(x, idx)
            mean = mean + Kzx @ self.alpha
            V = self.whiten(Kzx)
            cov = cov - V.T @ V
        return mean, 0.5 * (cov + cov.T)

    def posterior_cross(self, xa: np.ndarray, ia, xb: np.ndarray, ib) -> np.ndarray:
        """Posterior covariance between latent values at two tuple sets."""
        xa, xb = np.atleast_2d(xa), np.atleast_2d(xb)
        K = cov_arrays(self.h, xa, ia, xb, ib)
        if len(self):
            K = K - self.whiten(self.cross_to_data(xa, ia)).T @ self.whiten(self.cross_to_data(xb, ib))
        return K

    def belief(self, Z: Sequence[InputTuple]) -> GaussianBelief:
        X, idx = stack_tuples(Z)
        mean, cov = self.joint(X, idx)
        return GaussianBelief(X=X, idx=idx, mean=mean, cov=cov)

    def predict(self, x: np.ndarray, i: int) -> List[OutputDistribution]:
        mean, var = self.mean_var(x, i)
        return [output_distribution(i, mu, v, self.h.noise_var) for mu, v in zip(mean, var)]

    def log_marginal(self) -> float:
        """EP approximation of ``log p(y_X)``."""
        n = len(self)
        if n == 0:
            return 0.0
        L = self.chol[0]
        z = solve_triangular(L, self.resid, lower=True)
        gauss = -0.5 * float(z @ z) - float(np.sum(np.log(np.diag(L)))) - n * _LOG_SQRT_2PI
        return gauss + float(np.sum(self.sites.site_lognorm))


# ─── Module-level operations ──────────────────────────────────────────────────

def posterior(
    h: Hyperparams, obs: ObservationSet, sites: SiteParams, Z: Sequence[InputTuple]
) -> GaussianBelief:
    return MixedGP(h, obs, sites).belief(Z)


def output_distribution(i: int, mean: float, var: float, noise_var: float) -> OutputDistribution:
    if i == TARGET:
        return OutputDistribution(i=i, mean=float(mean), var=float(var) + noise_var)
    p = float(ndtr(mean / np.sqrt(1.0 + var)))
    return OutputDistribution(i=i, mean=float(mean), var=float(var), p=p)


def predict_output(belief: GaussianBelief, t: InputTuple, h: Hyperparams) -> OutputDistribution:
    mean, var = belief.marginal(belief.index_of(t))
    return output_distribution(t.i, mean, var, h.noise_var)


def approx_log_marginal(h: Hyperparams, obs: ObservationSet) -> float:
    return MixedGP(h, obs).log_marginal()
