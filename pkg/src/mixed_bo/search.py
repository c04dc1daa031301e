"""Box-constrained maximization of cheap batch functions.

Shared by acquisition maximization and the posterior-mean recommendation:
score a scrambled Sobol design, then refine the best few points with a
compass pattern search.
"""
from __future__ import annotations

from typing import Callable, Optional, Tuple

import numpy as np
from scipy.stats import qmc

BatchFn = Callable[[np.ndarray], np.ndarray]

SOBOL_POINTS = 1000
REFINE_POINTS = 5
REFINE_EVALS = 50


def sobol_points(bounds: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence scaled to the box."""
    bounds = np.asarray(bounds, dtype=float)
    sampler = qmc.Sobol(d=bounds.shape[0], scramble=True, seed=rng)
    unit = sampler.random_base2(int(np.ceil(np.log2(max(n, 2)))))[:n]
    return qmc.scale(unit, bounds[:, 0], bounds[:, 1])


def pattern_search(
    fn: BatchFn,
    x0: np.ndarray,
    f0: float,
    bounds: np.ndarray,
    max_evals: int = REFINE_EVALS,
    step: float = 0.1,
    min_step: float = 1e-6,
) -> Tuple[np.ndarray, float]:
    """Compass search for a maximum; ``step`` is relative to the box widths.

    Each poll evaluates all ``2 d`` neighbours in one batch and moves to the
    best strict improvement, otherwise the step is halved.
    """
    bounds = np.asarray(bounds, dtype=float)
    width = bounds[:, 1] - bounds[:, 0]
    d = bounds.shape[0]
    x, fx = np.asarray(x0, dtype=float).copy(), float(f0)
    directions = np.vstack([np.eye(d), -np.eye(d)])
    evals = 0
    while evals + 2 * d <= max_evals and step >= min_step:
        trial = np.clip(x[None, :] + step * width[None, :] * directions, bounds[:, 0], bounds[:, 1])
        values = np.asarray(fn(trial), dtype=float)
        evals += trial.shape[0]
        best = int(np.argmax(values))
        if values[best] > fx:
            x, fx = trial[best], float(values[best])
        else:
            step *= 0.5
    return x, fx


def maximize(
    fn: BatchFn,
    bounds: np.ndarray,
    rng: np.random.Generator,
    n_sobol: int = SOBOL_POINTS,
    n_refine: int = REFINE_POINTS,
    refine_evals: int = REFINE_EVALS,
    mask: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Candidate points and their values: the Sobol design plus refined optima.

    ``mask`` marks points that must not be returned (e.g. already observed);
    masked values are set to ``-inf``.  Returned arrays are ordered with the
    refined points last.
    """
    pts = sobol_points(bounds, n_sobol, rng)

    def scored(x: np.ndarray) -> np.ndarray:
        v = np.asarray(fn(x), dtype=float)
        if mask is not None:
            v = np.where(mask(x), -np.inf, v)
        return v

    values = scored(pts)
    finite = np.isfinite(values)
    order = np.argsort(-np.where(finite, values, -np.inf), kind="stable")[:n_refine]
    refined_x, refined_v = [], []
    for k in order:
        if not finite[k]:
            continue
        x, v = pattern_search(scored, pts[k], values[k], bounds, refine_evals)
        refined_x.append(x)
        refined_v.append(v)
    if refined_x:
        pts = np.vstack([pts, np.array(refined_x)])
        values = np.concatenate([values, np.array(refined_v)])
    return pts, values


def argmax(
    fn: BatchFn,
    bounds: np.ndarray,
    rng: np.random.Generator,
    n_sobol: int = SOBOL_POINTS,
    n_refine: int = REFINE_POINTS,
    refine_evals: int = REFINE_EVALS,
) -> Tuple[np.ndarray, float]:
    pts, values = maximize(fn, bounds, rng, n_sobol, n_refine, refine_evals)
    best = int(np.argmax(values))
    return pts[best], float(values[best])
