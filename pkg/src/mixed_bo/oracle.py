"""Rejection-sampling reference for the MT-PES acquisition on low-dimensional problems.

Joint posterior draws of the target on a dense grid give samples of the
target maximizer.  Grouping the draws by the bin their argmax falls into
and averaging the predictive distribution of ``y_i(x)`` within each group
estimates the maximizer-conditioned entropies directly.  The predictive of
``y_i(x)`` given one draw is computed in closed form by conditioning on the
grid values.  For the target that predictive is a Gaussian mixture, whose
entropy is integrated numerically after pooling nearby component means;
binary outputs mix Bernoulli probabilities exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import entr, ndtr

from .ep import MixedGP
from .errors import ConfigurationError, NumericalError
from .kernel import TARGET, InputTuple, ObservationSet, add_jitter
from .pes import bernoulli_entropy
from .problems import gen_synthetic, unit_grid

logger = logging.getLogger(__name__)

MIN_BIN_SAMPLES = 30
ORACLE_GRID_SIDE = 30
ORACLE_BINS = 8
MIXTURE_BINS = 64
MIXTURE_POINTS = 256
_QUERY_CHUNK = 256


@dataclass(frozen=True, eq=False)
class OracleSurface:
    values: np.ndarray
    bins_used: int
    bins_excluded: int
    samples_excluded: int


def _grid(bounds: np.ndarray, side: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, side) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _bin_ids(x: np.ndarray, bounds: np.ndarray, bins: int) -> np.ndarray:
    unit = (x - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
    cell = np.minimum((unit * bins).astype(int), bins - 1)
    return np.ravel_multi_index(cell.T, (bins,) * x.shape[1])


def binned_mixture(
    means: np.ndarray, var: np.ndarray, bins: int = MIXTURE_BINS, points: int = MIXTURE_POINTS
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared discretization of per-column mixtures ``N(means[r, c], var[c])``.

    Component means are pooled into ``bins`` cells per column, each cell
    represented by the average of its members.  Returns the flat cell id of
    every ``(r, c)``, the quadrature grid ``(n, points)`` and the cell
    densities on it ``(n, points, bins)``.  Every row subset is scored on
    the same cells and grid, so the density of a union is the weighted sum
    of the densities of its parts.
    """
    n = means.shape[1]
    lo, hi = means.min(axis=0), means.max(axis=0)
    width = np.maximum(hi - lo, 1e-12) / bins
    cell = np.minimum(((means - lo) / width).astype(int), bins - 1)
    flat = cell + bins * np.arange(n)[None, :]
    counts = np.bincount(flat.ravel(), minlength=n * bins).reshape(n, bins)
    sums = np.bincount(flat.ravel(), weights=means.ravel(), minlength=n * bins).reshape(n, bins)
    mid = lo[:, None] + (np.arange(bins) + 0.5)[None, :] * width[:, None]
    centres = np.where(counts > 0, sums / np.maximum(counts, 1), mid)

    sd = np.sqrt(var)
    y = (lo - 6.0 * sd)[:, None] + np.linspace(0.0, 1.0, points)[None, :] * (hi - lo + 12.0 * sd)[:, None]
    z = (y[:, :, None] - centres[:, None, :]) / sd[:, None, None]
    pdf = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * sd[:, None, None])
    return flat, y, pdf


def mixture_entropy(flat: np.ndarray, rows: np.ndarray, y: np.ndarray, pdf: np.ndarray) -> np.ndarray:
    """Differential entropy per column of the equal-weight mixture over ``rows``."""
    n, _, bins = pdf.shape
    w = np.bincount(flat[rows].ravel(), minlength=n * bins).reshape(n, bins) / np.sum(rows)
    dens = np.einsum("nk,ngk->ng", w, pdf)
    return trapezoid(entr(dens), y, axis=1)


def rs_oracle_surface(
    gp: MixedGP,
    x: np.ndarray,
    i: int,
    n_samples: int,
    rng: np.random.Generator,
    bounds: Optional[np.ndarray] = None,
    grid_side: int = ORACLE_GRID_SIDE,
    bins: int = ORACLE_BINS,
) -> OracleSurface:
    """Monte Carlo information gain about the target maximizer at every row of ``x``."""
    h = gp.h
    if h.d > 2:
        raise ConfigurationError(f"the rejection-sampling oracle supports d <= 2, got d={h.d}")
    bounds = np.tile([0.0, 1.0], (h.d, 1)) if bounds is None else np.asarray(bounds, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))

    G = _grid(bounds, grid_side)
    mean_g, cov_g = gp.joint(G, TARGET)
    try:
        chol = cho_factor(add_jitter(cov_g), lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"grid covariance not positive definite: {exc}") from exc
    L = np.tril(chol[0])
    draws = mean_g[None, :] + rng.standard_normal((n_samples, G.shape[0])) @ L.T
    star_bins = _bin_ids(G[np.argmax(draws, axis=1)], bounds, bins)

    labels, counts = np.unique(star_bins, return_counts=True)
    kept = labels[counts >= MIN_BIN_SAMPLES]
    excluded = labels[counts < MIN_BIN_SAMPLES]
    if kept.size == 0:
        raise NumericalError("no maximizer bin holds enough samples")
    if excluded.size:
        logger.info("Excluded %d bins with fewer than %d samples", excluded.size, MIN_BIN_SAMPLES)
    in_kept = np.isin(star_bins, kept)

    n_kept = int(np.sum(in_kept))
    centred = draws - mean_g[None, :]
    values = np.empty(x.shape[0])
    for start in range(0, x.shape[0], _QUERY_CHUNK):
        chunk = x[start:start + _QUERY_CHUNK]
        # f_i(x) | f_G for every query row and draw
        mean_x, var_x = gp.mean_var(chunk, i)
        k_xg = gp.posterior_cross(chunk, i, G, TARGET)
        A = cho_solve(chol, k_xg.T).T
        cond_var = np.maximum(var_x - np.sum(A * k_xg, axis=1), 0.0)
        cond_mean = mean_x[None, :] + centred @ A.T

        if i == TARGET:
            flat, y_grid, pdf = binned_mixture(cond_mean, cond_var + h.noise_var)

        def entropy(rows: np.ndarray) -> np.ndarray:
            if i == TARGET:
                return mixture_entropy(flat, rows, y_grid, pdf)
            m = cond_mean[rows]
            return bernoulli_entropy(np.mean(ndtr(m / np.sqrt(1.0 + cond_var)[None, :]), axis=0))

        h_cond = np.zeros(chunk.shape[0])
        for b in kept:
            rows = star_bins == b
            h_cond += (np.sum(rows) / n_kept) * entropy(rows)
        values[start:start + _QUERY_CHUNK] = entropy(in_kept) - h_cond
    return OracleSurface(
        values=values,
        bins_used=int(kept.size),
        bins_excluded=int(excluded.size),
        samples_excluded=int(n_samples - n_kept),
    )


def rs_oracle_acquisition(
    gp: MixedGP, t: InputTuple, n_samples: int, rng: np.random.Generator, **kwargs
) -> float:
    return float(rs_oracle_surface(gp, t.array[None, :], t.i, n_samples, rng, **kwargs).values[0])


def acquisition_state(
    seed: int = 0, n_target: int = 5, n_aux: int = 50, fraction: Optional[float] = 0.2
) -> Tuple[MixedGP, np.ndarray]:
    """Fitted model on a synthetic problem with random target and auxiliary observations.

    Returns the model and the problem bounds.
    """
    problem = gen_synthetic(seed, fraction).as_problem()
    rng = np.random.default_rng([seed, 1])
    obs = ObservationSet.empty(2)
    for i, n in ((TARGET, n_target), (2, n_aux)):
        for x in problem.sample_points(rng, n):
            obs = obs.append(InputTuple(x, i), problem.evaluate(x, i, rng))
    return MixedGP(problem.hyperparams, obs), problem.bounds


def query_grid(side: int = 50) -> np.ndarray:
    return unit_grid(side)
