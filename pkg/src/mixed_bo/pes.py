"""Mixed-type predictive entropy search.

For every sampled target maximizer ``x*`` the latent values
``(f_j(x*))_j`` are constrained by EP to respect

* the target maximum exceeding the best noisy target observation, and
* each auxiliary output admitting a positive label at ``x*`` up to its slack gap.

A candidate ``<x, i>`` is then scored by the entropy reduction of
``y_i(x)`` once ``f_i(x) <= f_i(x*) + slack`` is imposed by a single EP
step on the bivariate Gaussian of ``[f_i(x*), f_i(x)]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import entr, ndtr

from .ep import GaussianBelief, MixedGP, OutputDistribution, gaussian_with_sites, inv_mills
from .errors import NumericalError
from .features import MaximizerBatch
from .kernel import TARGET, InputTuple, cov_arrays

logger = logging.getLogger(__name__)

STAR_TOL = 1e-6
STAR_MAX_SWEEPS = 100
DEGENERATE_VAR = 1e-12

_LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))


# ─── Entropies ────────────────────────────────────────────────────────────────

def gaussian_entropy(var: np.ndarray) -> np.ndarray:
    return 0.5 * (_LOG_2PI_E + np.log(var))


def bernoulli_entropy(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, 1.0)
    return entr(p) + entr(1.0 - p)


def entropy_marginal(dist: OutputDistribution) -> float:
    if dist.is_binary:
        return float(bernoulli_entropy(dist.p))
    return float(gaussian_entropy(dist.var))


def observation_entropy(i: int, mean: np.ndarray, var: np.ndarray, noise_var: float) -> np.ndarray:
    """Entropy of ``y_i`` given a Gaussian latent ``N(mean, var)``."""
    if i == TARGET:
        return gaussian_entropy(var + noise_var)
    return bernoulli_entropy(ndtr(mean / np.sqrt(1.0 + var)))


# ─── Constraints on f(x*) ─────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ConstrainedStar:
    """Per-output marginals ``N(mu_i, tau_i)`` of ``f_i(x*)`` under the maximum constraints."""

    x_star: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    y_max: Optional[float]
    gaps: np.ndarray
    converged: bool = True


def _star_moments(
    j: int, m_cav: float, v_cav: float, y_max: Optional[float], c: np.ndarray, noise_var: float
) -> Tuple[float, float]:
    """Matched moments of the cavity times the constraint factor on output ``j``."""
    if j == 0:
        if y_max is None:
            return m_cav, v_cav
        tot = v_cav + noise_var
        alpha = (m_cav - y_max) / np.sqrt(tot)
        r = float(inv_mills(alpha))
        return m_cav + v_cav * r / np.sqrt(tot), v_cav - v_cav ** 2 * r * (r + alpha) / tot
    alpha = (c[j] + m_cav) / np.sqrt(v_cav)
    if not np.isfinite(alpha):
        return m_cav, v_cav
    r = float(inv_mills(alpha))
    return m_cav + np.sqrt(v_cav) * r, v_cav - v_cav * r * (r + alpha)


def constrain_fstar(
    belief: GaussianBelief,
    y_max: Optional[float],
    c: np.ndarray,
    noise_var: float,
    tol: float = STAR_TOL,
    max_sweeps: int = STAR_MAX_SWEEPS,
) -> ConstrainedStar:
    """EP over the ``M``-variate Gaussian of ``f(x*)`` with one site per output."""
    mean0 = np.asarray(belief.mean, dtype=float)
    K = np.asarray(belief.cov, dtype=float)
    c = np.asarray(c, dtype=float)
    M = mean0.size
    tau = np.zeros(M)
    nu = np.zeros(M)
    Sigma, mean = K.copy(), mean0.copy()
    converged = False
    for _ in range(max_sweeps):
        old_tau, old_nu = tau.copy(), nu.copy()
        for j in range(M):
            tau_cav = 1.0 / Sigma[j, j] - tau[j]
            nu_cav = mean[j] / Sigma[j, j] - nu[j]
            if not (np.isfinite(tau_cav) and tau_cav > 0.0):
                raise NumericalError("invalid cavity in maximum constraint", index=j)
            m_cav, v_cav = nu_cav / tau_cav, 1.0 / tau_cav
            m_hat, v_hat = _star_moments(j, m_cav, v_cav, y_max, c, noise_var)
            if not (np.isfinite(m_hat) and np.isfinite(v_hat) and v_hat > 0.0):
                raise NumericalError("non-finite constrained moment", index=j)
            tau[j] = max(1.0 / v_hat - tau_cav, 0.0)
            nu[j] = m_hat / v_hat - nu_cav
            Sigma, mean = gaussian_with_sites(K, mean0, tau, nu)
        change = max(float(np.max(np.abs(tau - old_tau))), float(np.max(np.abs(nu - old_nu))))
        if change < tol:
            converged = True
            break
    tau_out = np.diag(Sigma).copy()
    if not (np.all(np.isfinite(mean)) and np.all(tau_out > 0.0)):
        raise NumericalError("constrained maximum has non-positive variance")
    return ConstrainedStar(
        x_star=belief.X[0].copy(), mu=mean, tau=tau_out, y_max=y_max, gaps=c.copy(), converged=converged,
    )


# ─── Joint of f_i(x*) and f_i(x) ──────────────────────────────────────────────

@dataclass(frozen=True)
class BivariateBelief:
    mean: np.ndarray
    cov: np.ndarray


def joint_fplus_arrays(
    gp: MixedGP,
    x: np.ndarray,
    i: int,
    x_star: np.ndarray,
    mu_star: np.ndarray,
    tau_star: np.ndarray,
) -> Tuple[np.ndarray, ...]:
    """Moments of ``[f_i(x*_s), f_i(x_n)]`` for every query row ``n`` and sample ``s``.

    Returns ``(m1, m2, s11, s12, s22)`` with shape ``(n, S)`` each.  The first
    coordinate has the constrained marginal ``N(mu_star, tau_star)``; the
    second is the GP posterior given the data and ``f_i(x*_s)``.
    """
    h = gp.h
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    mu_star = np.asarray(mu_star, dtype=float)
    tau_star = np.asarray(tau_star, dtype=float)

    mean_t, var_t = gp.mean_var(x, i)
    mean_s, var_s = gp.mean_var(x_star, i)
    k_ts = cov_arrays(h, x, i, x_star, i)
    if len(gp):
        V_t = gp.whiten(gp.cross_to_data(x, i))
        V_s = gp.whiten(gp.cross_to_data(x_star, i))
        k_ts = k_ts - V_t.T @ V_s
    var_s = np.maximum(var_s, DEGENERATE_VAR)
    psi = k_ts / var_s[None, :]

    m1 = np.broadcast_to(mu_star[None, :], psi.shape)
    m2 = mean_t[:, None] + psi * (mu_star - mean_s)[None, :]
    s11 = np.broadcast_to(tau_star[None, :], psi.shape)
    s12 = psi * tau_star[None, :]
    s22 = var_t[:, None] - k_ts ** 2 / var_s[None, :] + psi ** 2 * tau_star[None, :]
    return m1, m2, s11, s12, np.maximum(s22, 0.0)


def joint_fplus(gp: MixedGP, x_star: np.ndarray, t: InputTuple, star: ConstrainedStar) -> BivariateBelief:
    k = t.i - 1
    m1, m2, s11, s12, s22 = joint_fplus_arrays(
        gp, t.array[None, :], t.i, np.asarray(x_star)[None, :], star.mu[k:k + 1], star.tau[k:k + 1]
    )
    return BivariateBelief(
        mean=np.array([m1[0, 0], m2[0, 0]]),
        cov=np.array([[s11[0, 0], s12[0, 0]], [s12[0, 0], s22[0, 0]]]),
    )


def one_step_arrays(
    m1: np.ndarray, m2: np.ndarray, s11: np.ndarray, s12: np.ndarray, s22: np.ndarray, slack
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of ``f_i(x)`` after imposing ``f_i(x) - f_i(x*) <= slack``."""
    eta = m2 - m1
    v = s11 + s22 - 2.0 * s12
    ok = v > DEGENERATE_VAR
    root = np.sqrt(np.where(ok, v, 1.0))
    z = (slack - eta) / root
    gamma = inv_mills(z)
    shrink = np.where(gamma > 0.0, gamma * (gamma + z), 0.0)
    b2 = s22 - s12
    mu_f = np.where(ok, m2 - gamma / root * b2, m2)
    v_f = np.where(ok, s22 - shrink / np.where(ok, v, 1.0) * b2 ** 2, s22)
    return mu_f, np.maximum(v_f, 0.0)


def one_step_ep(joint: BivariateBelief, slack: float) -> Tuple[float, float]:
    mu_f, v_f = one_step_arrays(
        joint.mean[0], joint.mean[1], joint.cov[0, 0], joint.cov[0, 1], joint.cov[1, 1], slack
    )
    return float(mu_f), float(v_f)


# ─── Acquisition ──────────────────────────────────────────────────────────────

def slack_weight(i: int) -> float:
    return 0.0 if i == TARGET else 1.0


class MTPESAcquisition:
    """Per-iteration MT-PES state: the fitted model and one constrained star per kept sample."""

    def __init__(self, gp: MixedGP, batch: MaximizerBatch, stars: List[ConstrainedStar], gaps: np.ndarray):
        self.gp = gp
        self.batch = batch
        self.stars = stars
        self.gaps = gaps
        self.x_star = np.array([s.x_star for s in stars]).reshape(len(stars), gp.h.d)
        self.mu = np.array([s.mu for s in stars]).reshape(len(stars), gp.h.M)
        self.tau = np.array([s.tau for s in stars]).reshape(len(stars), gp.h.M)

    @classmethod
    def precompute(cls, gp: MixedGP, batch: MaximizerBatch) -> "MTPESAcquisition":
        h = gp.h
        y_max = gp.obs.y_max
        if y_max is None:
            logger.warning("No target observation yet; the observed-maximum constraint is skipped")
        outputs = np.arange(1, h.M + 1)
        stars: List[ConstrainedStar] = []
        keep: List[int] = []
        for s in range(batch.S):
            belief = gp.belief([InputTuple(batch.x_star[s], j) for j in outputs])
            try:
                star = constrain_fstar(belief, y_max, batch.gaps, h.noise_var)
            except NumericalError as exc:
                logger.warning("Dropping maximizer sample %d: %s", s, exc)
                continue
            if not star.converged:
                logger.warning("Dropping maximizer sample %d: constraint EP did not converge", s)
                continue
            stars.append(star)
            keep.append(s)
        if not stars:
            raise NumericalError("every maximizer sample failed the constraint EP")

        gaps = np.zeros(h.M)
        if h.M > 1:
            mu = np.array([st.mu for st in stars])
            gaps[1:] = np.mean(batch.f_max[keep, 1:] - mu[:, 1:], axis=0)
        stars = [replace(st, gaps=gaps) for st in stars]
        return cls(gp, batch, stars, gaps)

    @property
    def n_samples(self) -> int:
        return len(self.stars)

    def evaluate(self, x: np.ndarray, i: int) -> np.ndarray:
        """Acquisition value at every row of ``x`` on output ``i``."""
        gp = self.gp
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mean, var = gp.mean_var(x, i)
        h_prior = observation_entropy(i, mean, var, gp.h.noise_var)

        k = i - 1
        m1, m2, s11, s12, s22 = joint_fplus_arrays(gp, x, i, self.x_star, self.mu[:, k], self.tau[:, k])
        mu_f, v_f = one_step_arrays(m1, m2, s11, s12, s22, slack_weight(i) * self.gaps[k])
        h_cond = observation_entropy(i, mu_f, v_f, gp.h.noise_var)
        bad = ~np.isfinite(h_cond)
        if np.any(bad):
            logger.warning("Dropping %d non-finite conditional entropies", int(np.sum(bad)))
            h_cond = np.where(bad, np.nan, h_cond)
        return h_prior - np.nanmean(h_cond, axis=1)

    def __call__(self, t: InputTuple) -> float:
        return float(self.evaluate(t.array[None, :], t.i)[0])

