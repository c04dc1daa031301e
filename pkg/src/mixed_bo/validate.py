"""Numerical checks of the inference and acquisition code against independent references.

Each suite compares one computation with a reference obtained a different
way (adaptive quadrature, analytic truncated-normal moments, finite
differences, exhaustive argmax probabilities) and returns one
``CheckResult`` per comparison.  ``mixed-bo validate`` runs them all and
the test suite reuses them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.special import ndtr

from .ep import GaussianBelief, MixedGP, approx_log_marginal
from .es import CandidateSet, MTESAcquisition
from .features import GaussianWeights, draw_features, feature_matrix, sample_function
from .kernel import TARGET, Hyperparams, InputTuple, ObservationSet, add_jitter, cov_arrays
from .oracle import acquisition_state
from .pes import _star_moments, constrain_fstar, joint_fplus_arrays, one_step_arrays

logger = logging.getLogger(__name__)

PRIOR_MEANS = (-1.0, 0.0, 1.0)
PRIOR_VARS = (0.25, 1.0, 4.0)


@dataclass
class CheckResult:
    """One comparison against a reference."""
    suite: str
    name: str
    passed: bool
    error: float
    tolerance: float

    @property
    def detail(self) -> str:
        return f"err {self.error:.2e} (tol {self.tolerance:.0e})"


def _check(suite: str, name: str, error: float, tol: float) -> CheckResult:
    error = float(error) if np.isfinite(error) else float("inf")
    return CheckResult(suite=suite, name=name, passed=error <= tol, error=error, tolerance=tol)


# ─── Probit EP vs quadrature ──────────────────────────────────────────────────

def binary_site_hyperparams(prior_mean: float, prior_var: float) -> Hyperparams:
    """1-D model whose auxiliary output has the given constant prior mean and variance."""
    h = Hyperparams(gamma=[[4.0]], P=[[50.0], [50.0]], s=[[1.0], [1.0]], m=[0.0, prior_mean], noise_var=1e-2)
    scale = np.sqrt(prior_var / h.prior_var(2))
    return Hyperparams(gamma=h.gamma, P=h.P, s=[[1.0], [scale]], m=h.m, noise_var=h.noise_var)


def probit_quadrature(m: float, v: float, y: float = 1.0):
    """``(Z, mean, var)`` of ``N(f | m, v) Phi(y f)`` by adaptive quadrature."""
    sd = np.sqrt(v)
    lo, hi = m - 12.0 * sd, m + 12.0 * sd

    def moment(k: int) -> float:
        return integrate.quad(
            lambda f: f ** k * stats.norm.pdf(f, m, sd) * ndtr(y * f), lo, hi, epsabs=1e-13, epsrel=1e-11
        )[0]

    z = moment(0)
    mean = moment(1) / z
    return z, mean, moment(2) / z - mean ** 2


def check_probit_ep() -> List[CheckResult]:
    suite = "probit-ep"
    out: List[CheckResult] = []
    x0 = np.zeros((1, 1))
    tests = np.linspace(-0.4, 0.4, 5)[:, None]
    for m in PRIOR_MEANS:
        for v in PRIOR_VARS:
            h = binary_site_hyperparams(m, v)
            obs = ObservationSet(X=x0, idx=np.array([2]), y=np.array([1.0]))
            gp = MixedGP(h, obs)
            z, q_mean, q_var = probit_quadrature(m, v)
            mean, var = gp.mean_var(x0, 2)
            tag = f"m={m:+g} v={v:g}"
            out.append(_check(suite, f"{tag} mean", abs(mean[0] - q_mean), 1e-3))
            out.append(_check(suite, f"{tag} var", abs(var[0] - q_var), 1e-3))
            out.append(_check(suite, f"{tag} log Z", abs(gp.log_marginal() - np.log(z)), 1e-3))

            # predictive at other inputs through the exact Gaussian conditional
            k = cov_arrays(h, tests, 2, x0, 2)[:, 0]
            v0 = h.prior_var(2)
            ref_mean = m + k / v0 * (q_mean - m)
            ref_var = v0 - k ** 2 / v0 + (k / v0) ** 2 * q_var
            p_mean, p_var = gp.mean_var(tests, 2)
            err = max(np.max(np.abs(p_mean - ref_mean)), np.max(np.abs(p_var - ref_var)))
            out.append(_check(suite, f"{tag} predictive", err, 1e-3))
    return out


# ─── Maximum constraints vs truncated normals ─────────────────────────────────

def check_star_moments(rng: Optional[np.random.Generator] = None) -> List[CheckResult]:
    suite = "fstar-constraints"
    rng = np.random.default_rng(7) if rng is None else rng
    out: List[CheckResult] = []
    err_c2 = err_c3 = 0.0
    for _ in range(20):
        m, v = rng.normal(0.0, 1.0), rng.uniform(0.2, 3.0)
        sd = np.sqrt(v)
        y_max = rng.normal(0.0, 1.0)
        got = _star_moments(0, m, v, y_max, np.zeros(1), 0.0)
        ref = stats.truncnorm.stats((y_max - m) / sd, np.inf, loc=m, scale=sd, moments="mv")
        err_c2 = max(err_c2, abs(got[0] - ref[0]), abs(got[1] - ref[1]))

        c = np.array([0.0, rng.uniform(0.0, 2.0)])
        got = _star_moments(1, m, v, None, c, 0.0)
        ref = stats.truncnorm.stats((-c[1] - m) / sd, np.inf, loc=m, scale=sd, moments="mv")
        err_c3 = max(err_c3, abs(got[0] - ref[0]), abs(got[1] - ref[1]))
    out.append(_check(suite, "observed-maximum site", err_c2, 1e-9))
    out.append(_check(suite, "gap site", err_c3, 1e-9))

    # one output, N(0, 1) prior truncated at zero
    belief = GaussianBelief(X=np.zeros((1, 1)), idx=np.array([1]), mean=np.zeros(1), cov=np.ones((1, 1)))
    star = constrain_fstar(belief, 0.0, np.zeros(1), 1e-12)
    ref_mean = np.sqrt(2.0 / np.pi)
    err = max(abs(star.mu[0] - ref_mean), abs(star.tau[0] - (1.0 - 2.0 / np.pi)))
    out.append(_check(suite, "half-normal", err, 1e-6))

    # two outputs, diagonal prior: the joint factorizes
    cov = np.diag([0.8, 1.5])
    mean = np.array([0.3, -0.2])
    c = np.array([0.0, 0.4])
    belief = GaussianBelief(X=np.zeros((2, 1)), idx=np.array([1, 2]), mean=mean, cov=cov)
    star = constrain_fstar(belief, 0.1, c, 1e-3)
    ref = [
        _tilted_quadrature(mean[0], cov[0, 0], lambda f: ndtr((f - 0.1) / np.sqrt(1e-3))),
        _tilted_quadrature(mean[1], cov[1, 1], lambda f: (f >= -c[1]).astype(float), points=[-c[1]]),
    ]
    err = max(max(abs(star.mu[j] - ref[j][0]), abs(star.tau[j] - ref[j][1])) for j in range(2))
    out.append(_check(suite, "two outputs vs quadrature", err, 1e-3))
    return out


def _tilted_quadrature(m: float, v: float, factor: Callable, points: Optional[Sequence[float]] = None):
    sd = np.sqrt(v)
    lo, hi = m - 10.0 * sd, m + 10.0 * sd
    pts = [p for p in (points or []) if lo < p < hi] or None

    def moment(k: int) -> float:
        return integrate.quad(
            lambda f: f ** k * stats.norm.pdf(f, m, sd) * factor(np.asarray(f)), lo, hi, points=pts, limit=200
        )[0]

    z = moment(0)
    mean = moment(1) / z
    return mean, moment(2) / z - mean ** 2


# ─── One-step EP vs truncated bivariate Gaussian ──────────────────────────────

def truncated_bivariate(mean: np.ndarray, cov: np.ndarray, slack: float):
    """Mean and variance of ``f2`` under ``N([f1, f2]) * 1[f2 - f1 <= slack]``.

    Integrates over ``r = f2 - f1`` numerically with ``f2 | r`` in closed form.
    """
    eta = mean[1] - mean[0]
    v = cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1]
    b = cov[1, 1] - cov[0, 1]
    cond_var = cov[1, 1] - b ** 2 / v
    sd = np.sqrt(v)
    lo = eta - 12.0 * sd

    def weight(r: float) -> float:
        return stats.norm.pdf(r, eta, sd)

    def cond_mean(r: float) -> float:
        return mean[1] + b / v * (r - eta)

    hi = min(slack, eta + 12.0 * sd)
    z = integrate.quad(weight, lo, hi, epsabs=1e-14)[0]
    m1 = integrate.quad(lambda r: weight(r) * cond_mean(r), lo, hi, epsabs=1e-14)[0] / z
    m2 = integrate.quad(lambda r: weight(r) * (cond_var + cond_mean(r) ** 2), lo, hi, epsabs=1e-14)[0] / z
    return m1, m2 - m1 ** 2


def check_one_step(rng: Optional[np.random.Generator] = None, cases: int = 20) -> List[CheckResult]:
    suite = "one-step-ep"
    rng = np.random.default_rng(11) if rng is None else rng
    err = 0.0
    for _ in range(cases):
        A = rng.normal(size=(2, 2))
        cov = A @ A.T + 0.1 * np.eye(2)
        mean = rng.normal(size=2)
        slack = float(rng.choice([0.0, rng.uniform(0.0, 1.5)]))
        mu_f, v_f = one_step_arrays(mean[0], mean[1], cov[0, 0], cov[0, 1], cov[1, 1], slack)
        ref = truncated_bivariate(mean, cov, slack)
        err = max(err, abs(float(mu_f) - ref[0]), abs(float(v_f) - ref[1]))
    return [_check(suite, f"{cases} random cases vs quadrature", err, 1e-4)]


# ─── Joint of f(x*) and f(x) vs pointwise density product ─────────────────────

def check_joint_density(seed: int = 3, side: int = 50) -> List[CheckResult]:
    suite = "joint-fplus"
    gp, _ = acquisition_state(seed, n_target=3, n_aux=10)
    out: List[CheckResult] = []
    for i in (TARGET, 2):
        x = np.array([[0.3, 0.6]])
        x_star = np.array([[0.7, 0.2]])
        mu_star, tau_star = np.array([0.4]), np.array([0.05])
        m1, m2, s11, s12, s22 = (a[0, 0] for a in joint_fplus_arrays(gp, x, i, x_star, mu_star, tau_star))
        joint = stats.multivariate_normal([m1, m2], [[s11, s12], [s12, s22]])

        # p(f(x) | data, f(x*)) from the 2x2 posterior of [f(x*), f(x)]
        mean, cov = gp.joint(np.vstack([x_star, x]), i)
        slope = cov[0, 1] / cov[0, 0]
        cond_sd = np.sqrt(cov[1, 1] - cov[0, 1] ** 2 / cov[0, 0])

        a = np.linspace(m1 - 3.0 * np.sqrt(s11), m1 + 3.0 * np.sqrt(s11), side)
        b = np.linspace(m2 - 3.0 * np.sqrt(s22), m2 + 3.0 * np.sqrt(s22), side)
        A, B = np.meshgrid(a, b, indexing="ij")
        got = joint.pdf(np.dstack([A, B]))
        ref = (
            stats.norm.pdf(B, mean[1] + slope * (A - mean[0]), cond_sd)
            * stats.norm.pdf(A, mu_star[0], np.sqrt(tau_star[0]))
        )
        rel = np.max(np.abs(got - ref) / np.maximum(ref, 1e-300))
        out.append(_check(suite, f"output {i} density grid", rel, 1e-6))
    return out


# ─── Random-feature gradients vs finite differences ───────────────────────────

def check_feature_gradients(seed: int = 5, points: int = 20, step: float = 1e-5) -> List[CheckResult]:
    suite = "feature-gradients"
    rng = np.random.default_rng(seed)
    h = Hyperparams(
        gamma=[[20.0, 10.0, 30.0]], P=[[100.0, 50.0, 80.0], [60.0, 90.0, 70.0]],
        s=[[1.0], [0.7]], m=[0.0, -0.3], noise_var=1e-3,
    )
    basis = draw_features(h, 100, rng)
    sample = sample_function(basis, GaussianWeights.prior(basis.size), rng)
    out: List[CheckResult] = []
    for i in (1, 2):
        x = rng.uniform(size=(points, h.d))
        g = sample.grad(x, i)
        fd = np.empty_like(g)
        for k in range(h.d):
            e = np.zeros(h.d)
            e[k] = step
            fd[:, k] = (sample(x + e, i) - sample(x - e, i)) / (2.0 * step)
        rel = np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))
        out.append(_check(suite, f"output {i}", rel, 1e-5))
    return out


# ─── Random-feature inner products vs the closed-form kernel ───────────────────

def check_feature_kernel(seed: int = 6, pairs: int = 50, small: int = 50, large: int = 2000) -> List[CheckResult]:
    suite = "feature-kernel"
    rng = np.random.default_rng(seed)
    h = Hyperparams(
        gamma=[[25.0, 25.0]], P=[[200.0, 150.0], [120.0, 180.0]],
        s=[[1.0], [0.8]], m=[0.0, -0.2], noise_var=1e-3,
    )
    x = rng.uniform(size=(pairs, h.d))
    xp = np.clip(x + 0.1 * rng.standard_normal((pairs, h.d)), 0.0, 1.0)
    idx = rng.integers(1, h.M + 1, size=pairs)
    idx_p = rng.integers(1, h.M + 1, size=pairs)
    exact = np.array([cov_arrays(h, x[k:k + 1], idx[k], xp[k:k + 1], idx_p[k])[0, 0] for k in range(pairs)])
    scale = np.array([h.prior_var(int(i)) for i in idx])

    def mean_error(m: int) -> float:
        basis = draw_features(h, m, rng)
        approx = np.sum(feature_matrix(basis, h, x, idx) * feature_matrix(basis, h, xp, idx_p), axis=1)
        return float(np.mean(np.abs(approx - exact) / scale))

    err_small, err_large = mean_error(small), mean_error(large)
    logger.debug("feature kernel error: m=%d %.4f, m=%d %.4f", small, err_small, large, err_large)
    return [
        _check(suite, f"m={large} mean error", err_large, 0.05),
        _check(suite, f"m={large} vs m={small} error ratio", err_large / err_small, 1.0),
    ]


# ─── Hyperparameter likelihood ────────────────────────────────────────────────

def check_hyperparam_likelihood(seed: int = 13, n: int = 200) -> List[CheckResult]:
    suite = "hyperparam-likelihood"
    rng = np.random.default_rng(seed)
    h = Hyperparams(gamma=[[40.0]], P=[[200.0]], s=[[1.0]], m=[0.0], noise_var=1e-2)
    h = Hyperparams(gamma=h.gamma, P=h.P, s=[[1.0 / np.sqrt(h.prior_var(1))]], m=h.m, noise_var=h.noise_var)
    x = np.sort(rng.uniform(size=(n, 1)), axis=0)
    K = add_jitter(cov_arrays(h, x, 1, x, 1))
    f = np.linalg.cholesky(K) @ rng.standard_normal(n)
    y = f + rng.normal(0.0, np.sqrt(h.noise_var), n)
    obs = ObservationSet(X=x, idx=np.ones(n, dtype=int), y=y)
    # doubling every lengthscale quarters the precisions
    wide = Hyperparams(gamma=h.gamma / 4.0, P=h.P / 4.0, s=h.s, m=h.m, noise_var=h.noise_var)
    true_lm, wide_lm = approx_log_marginal(h, obs), approx_log_marginal(wide, obs)
    return [_check(suite, "true beats doubled lengthscale", max(wide_lm - true_lm, 0.0), 0.0)]


# ─── MT-ES vs exhaustive argmax probabilities ─────────────────────────────────

def argmax_probabilities(mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Exact ``P(argmax = j)`` of a Gaussian vector via orthant probabilities."""
    k = mean.size
    p = np.empty(k)
    for j in range(k):
        D = np.delete(np.eye(k), j, axis=0)
        D[:, j] = -1.0
        # D f <= 0  <=>  f_j >= f_l for every l
        p[j] = stats.multivariate_normal.cdf(
            np.zeros(k - 1), D @ mean, D @ cov @ D.T,
            allow_singular=True, abseps=1e-8, releps=1e-8,
        )
    return p / p.sum()


def es_toy_state() -> tuple:
    """1-D two-output model with a handful of observations and three candidates."""
    h = Hyperparams(gamma=[[30.0]], P=[[300.0], [300.0]], s=[[1.2], [1.0]], m=[0.0, 0.0], noise_var=1e-2)
    obs = ObservationSet(
        X=np.array([[0.1], [0.45], [0.9], [0.3], [0.7]]),
        idx=np.array([1, 1, 1, 2, 2]),
        y=np.array([-0.2, 0.4, 0.1, 1.0, -1.0]),
    )
    gp = MixedGP(h, obs)
    points = np.array([[0.25], [0.55], [0.8]])
    mean, var = gp.mean_var(points, TARGET)
    candidates = CandidateSet(points=points, mean=mean, std=np.sqrt(var), ei=np.zeros(3))
    return gp, candidates


def es_brute_force(gp: MixedGP, candidates: CandidateSet, x: np.ndarray, nodes: int = 60) -> float:
    """Information gain of a target evaluation at ``x`` with exact argmax probabilities."""
    pts = np.vstack([candidates.points, x[None, :]])
    mean, cov = gp.joint(pts, TARGET)
    k = candidates.k
    base = stats.entropy(argmax_probabilities(mean[:k], cov[:k, :k]))
    total = cov[k, k] + gp.h.noise_var
    gain = cov[:k, k] / total
    post_cov = cov[:k, :k] - np.outer(cov[:k, k], cov[:k, k]) / total
    u, w = np.polynomial.hermite.hermgauss(nodes)
    ys = mean[k] + np.sqrt(2.0 * total) * u
    expected = sum(
        wt / np.sqrt(np.pi) * stats.entropy(argmax_probabilities(mean[:k] + gain * (y - mean[k]), post_cov))
        for wt, y in zip(w, ys)
    )
    return float(base - expected)


def check_es_toy(seed: int = 17, n_draws: int = 50_000) -> List[CheckResult]:
    suite = "mtes-toy"
    gp, candidates = es_toy_state()
    rng = np.random.default_rng(seed)
    acq = MTESAcquisition(gp, candidates, rng.standard_normal((n_draws, candidates.k)), n_outer=20)
    out: List[CheckResult] = []
    for xv in (0.2, 0.6, 0.85):
        x = np.array([xv])
        got = acq(InputTuple(x, TARGET))
        out.append(_check(suite, f"x={xv:g}", abs(got - es_brute_force(gp, candidates, x)), 0.02))
    return out


SUITES: Dict[str, Callable[[], List[CheckResult]]] = {
    "probit-ep": check_probit_ep,
    "fstar-constraints": check_star_moments,
    "one-step-ep": check_one_step,
    "joint-fplus": check_joint_density,
    "feature-gradients": check_feature_gradients,
    "feature-kernel": check_feature_kernel,
    "hyperparam-likelihood": check_hyperparam_likelihood,
    "mtes-toy": check_es_toy,
}


def run_suites(names: Optional[Sequence[str]] = None) -> List[CheckResult]:
    names = list(SUITES) if not names else list(names)
    results: List[CheckResult] = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}")
        logger.debug("Running suite %s", name)
        try:
            results.extend(SUITES[name]())
        except Exception as exc:  # a crash counts as a failed suite
            logger.error("Suite %s raised %s: %s", name, type(exc).__name__, exc)
            results.append(CheckResult(suite=name, name="crashed", passed=False,
                                       error=float("inf"), tolerance=0.0))
    return results
