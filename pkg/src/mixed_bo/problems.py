"""Benchmark problems: the CMOGP-sampled synthetic functions and Hartmann-6D."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.optimize import minimize

from .errors import ConfigurationError, OracleError, UnsupportedMetricError
from .kernel import TARGET, Hyperparams, add_jitter, cov_arrays, prior_var_arrays

logger = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray, np.random.Generator], float]
TargetFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_COST_TARGET = 10.0
DEFAULT_COST_AUX = 1.0


@dataclass(frozen=True)
class ConstantCost:
    value: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.full(x.shape[0], self.value)


# ─── Problem ──────────────────────────────────────────────────────────────────

@dataclass(eq=False)
class Problem:
    """An optimization problem over a box with one target and binary auxiliaries.

    ``oracles[i - 1]`` evaluates output ``i``; ``costs[i - 1]`` is its cost
    function.  ``target``/``f_opt`` are the noiseless target and its global
    maximum, present only for benchmarks.
    """

    name: str
    bounds: np.ndarray
    oracles: List[Oracle]
    costs: List[Callable[[np.ndarray], np.ndarray]]
    target: Optional[TargetFn] = None
    x_opt: Optional[np.ndarray] = None
    f_opt: Optional[float] = None
    hyperparams: Optional[Hyperparams] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.bounds.ndim != 2 or self.bounds.shape[1] != 2:
            raise ConfigurationError(f"bounds must have shape (d, 2), got {self.bounds.shape}")
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ConfigurationError("every lower bound must be below its upper bound")
        if len(self.oracles) != len(self.costs) or not self.oracles:
            raise ConfigurationError("need one oracle and one cost per output")
        sample = self.sample_points(np.random.default_rng(0), 64)
        target_cost = self.costs[0](sample)
        for i in range(2, self.M + 1):
            c = self.costs[i - 1](sample)
            if np.any(c <= 0.0) or np.any(c >= target_cost):
                raise ConfigurationError(f"output {i} must be strictly cheaper than the target")
        if np.any(target_cost <= 0.0):
            raise ConfigurationError("costs must be positive")

    @property
    def d(self) -> int:
        return int(self.bounds.shape[0])

    @property
    def M(self) -> int:
        return len(self.oracles)

    @property
    def has_ground_truth(self) -> bool:
        return self.target is not None and self.f_opt is not None

    def sample_points(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return rng.uniform(self.bounds[:, 0], self.bounds[:, 1], size=(n, self.d))

    def cost(self, i: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.costs[i - 1](np.atleast_2d(x)), dtype=float)

    def min_cost(self) -> float:
        """Cheapest cost of any output; exact for constant costs."""
        mins = []
        for fn in self.costs:
            if isinstance(fn, ConstantCost):
                mins.append(fn.value)
            else:
                mins.append(float(np.min(fn(self.sample_points(np.random.default_rng(0), 1024)))))
        return min(mins)

    def evaluate(self, x: np.ndarray, i: int, rng: np.random.Generator) -> float:
        if not 1 <= i <= self.M:
            raise ConfigurationError(f"output index {i} outside 1..{self.M}")
        try:
            y = float(self.oracles[i - 1](np.asarray(x, dtype=float), rng))
        except Exception as exc:
            raise OracleError(f"oracle for output {i} failed at {np.round(x, 6).tolist()}: {exc}") from exc
        if not np.isfinite(y):
            raise OracleError(f"oracle for output {i} returned {y}")
        if i != TARGET and y not in (-1.0, 1.0):
            raise OracleError(f"auxiliary oracle {i} returned {y}, expected +1 or -1")
        return y

    def with_costs(self, cost_target: float, cost_aux: Sequence[float]) -> "Problem":
        aux = list(cost_aux) if len(cost_aux) != 1 else list(cost_aux) * (self.M - 1)
        return Problem(
            name=self.name, bounds=self.bounds, oracles=self.oracles,
            costs=[ConstantCost(cost_target)] + [ConstantCost(c) for c in aux[: self.M - 1]],
            target=self.target, x_opt=self.x_opt, f_opt=self.f_opt,
            hyperparams=self.hyperparams, meta=dict(self.meta),
        )

    def target_only(self) -> "Problem":
        return Problem(
            name=self.name, bounds=self.bounds, oracles=self.oracles[:1], costs=self.costs[:1],
            target=self.target, x_opt=self.x_opt, f_opt=self.f_opt,
            hyperparams=None if self.hyperparams is None else self.hyperparams.subset([TARGET]),
            meta=dict(self.meta),
        )


def immediate_regret(problem: Problem, x_rec: np.ndarray) -> float:
    """``|f_1(x*) - f_1(x_rec)|`` against the stored ground truth."""
    if not problem.has_ground_truth:
        raise UnsupportedMetricError(f"problem {problem.name!r} has no ground-truth target")
    return float(abs(problem.f_opt - problem.target(np.atleast_2d(x_rec))[0]))


def resolve_maximum(
    fn: TargetFn,
    bounds: np.ndarray,
    rng: np.random.Generator,
    starts: int = 64,
    grad: Optional[TargetFn] = None,
    x0: Optional[np.ndarray] = None,
):
    """Multi-start L-BFGS-B maximization of a vectorised function over a box."""
    bounds = np.asarray(bounds, dtype=float)
    pts = rng.uniform(bounds[:, 0], bounds[:, 1], size=(max(starts * 20, 100), bounds.shape[0]))
    vals = fn(pts)
    init = pts[np.argsort(-vals, kind="stable")[:starts]]
    if x0 is not None:
        init = np.vstack([np.atleast_2d(x0), init])

    def neg(z):
        return -float(fn(z[None, :])[0])

    jac = None if grad is None else (lambda z: -grad(z[None, :])[0])
    best_x, best_v = init[0], float(fn(init[:1])[0])
    for x in init:
        res = minimize(neg, x, jac=jac, method="L-BFGS-B", bounds=bounds)
        v = -float(res.fun)
        if v > best_v:
            best_x, best_v = np.clip(res.x, bounds[:, 0], bounds[:, 1]), v
    return best_x, best_v


def default_hyperparams(d: int, M: int, Q: int = 1, noise_var: float = 1e-3) -> Hyperparams:
    """Unit-prior-variance starting point for learning on [0, 1]^d problems."""
    gamma = np.full((Q, d), 25.0)
    P = np.full((M, d), 200.0)
    h = Hyperparams(gamma=gamma, P=P, s=np.ones((M, Q)), m=np.zeros(M), noise_var=noise_var)
    scale = 1.0 / np.sqrt(prior_var_arrays(h, np.arange(1, M + 1)))
    return Hyperparams(gamma=gamma, P=P, s=scale[:, None] * np.ones((M, Q)) / np.sqrt(Q),
                       m=np.zeros(M), noise_var=noise_var)


# ─── Synthetic CMOGP problems ─────────────────────────────────────────────────

SYNTHETIC_N_TUPLES = 450
SYNTHETIC_NOISE = 0.01
GRID_SIDE = 100
BISECTION_STEPS = 60
FRACTION_TOL = 0.02


def synthetic_hyperparams() -> Hyperparams:
    return Hyperparams(
        gamma=[[100.0, 100.0]],
        P=[[2000.0, 100.0], [100.0, 2000.0]],
        s=[[1.0], [1.0]],
        m=[0.0, 0.0],
        noise_var=SYNTHETIC_NOISE,
    )


def unit_grid(side: int = GRID_SIDE) -> np.ndarray:
    g = (np.arange(side) + 0.5) / side
    a, b = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


@dataclass(eq=False)
class SyntheticProblem:
    """Target ``g_1`` and auxiliary latent ``g_2`` frozen as posterior means of a prior draw.

    Auxiliary output ``k`` returns ``sign(g_2(x) + biases[k])``.
    """

    seed: int
    h: Hyperparams
    X: np.ndarray
    idx: np.ndarray
    draws: np.ndarray
    alpha: np.ndarray
    biases: List[float]
    x_opt: np.ndarray = field(default_factory=lambda: np.zeros(2))
    f_opt: float = 0.0

    def latent(self, x: np.ndarray, i: int) -> np.ndarray:
        return cov_arrays(self.h, np.atleast_2d(x), i, self.X, self.idx) @ self.alpha

    def target(self, x: np.ndarray) -> np.ndarray:
        return self.latent(x, 1)

    def aux(self, x: np.ndarray, k: int = 0) -> np.ndarray:
        return np.where(self.latent(x, 2) + self.biases[k] >= 0.0, 1.0, -1.0)

    def positive_fraction(self, k: int = 0) -> float:
        return float(np.mean(self.aux(unit_grid(), k) > 0))

    @property
    def model_hyperparams(self) -> Hyperparams:
        """Joint model of the target and every auxiliary output (biases included)."""
        n_aux = len(self.biases)
        return Hyperparams(
            gamma=self.h.gamma,
            P=np.vstack([self.h.P[0]] + [self.h.P[1]] * n_aux),
            s=np.vstack([self.h.s[0]] + [self.h.s[1]] * n_aux),
            m=np.array([self.h.m[0]] + list(self.biases)),
            noise_var=self.h.noise_var,
        )

    def as_problem(
        self, cost_target: float = DEFAULT_COST_TARGET, cost_aux: float = DEFAULT_COST_AUX
    ) -> Problem:
        std = np.sqrt(self.h.noise_var)

        def target_oracle(x, rng):
            return float(self.target(x)[0] + std * rng.standard_normal())

        oracles: List[Oracle] = [target_oracle]
        for k in range(len(self.biases)):
            oracles.append(lambda x, rng, k=k: float(self.aux(x, k)[0]))
        return Problem(
            name=f"synthetic-{self.seed}",
            bounds=np.array([[0.0, 1.0], [0.0, 1.0]]),
            oracles=oracles,
            costs=[ConstantCost(cost_target)] + [ConstantCost(cost_aux)] * len(self.biases),
            target=self.target,
            x_opt=self.x_opt,
            f_opt=self.f_opt,
            hyperparams=self.model_hyperparams,
            meta={"seed": self.seed, "biases": list(self.biases)},
        )


def _bisect_bias(g2_grid: np.ndarray, fraction: float) -> float:
    lo = -float(np.max(np.abs(g2_grid))) - 1.0
    hi = -lo
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        frac = float(np.mean(g2_grid + mid >= 0.0))
        if abs(frac - fraction) <= FRACTION_TOL:
            return mid
        if frac < fraction:
            lo = mid
        else:
            hi = mid
    raise ConfigurationError(f"could not reach a positive fraction of {fraction} within tolerance")


def gen_synthetic(
    seed: int,
    m2_target_fraction: Optional[float] = 0.2,
    extra_fractions: Sequence[Optional[float]] = (),
) -> SyntheticProblem:
    """Sample a 2-D synthetic problem.

    ``m2_target_fraction=None`` fixes the auxiliary bias at 0; each entry of
    ``extra_fractions`` adds one more auxiliary output on the same latent.
    """
    fractions = [m2_target_fraction] + list(extra_fractions)
    for f in fractions:
        if f is not None and not 0.0 < f < 1.0:
            raise ConfigurationError(f"positive fraction must lie in (0, 1), got {f}")

    rng = np.random.default_rng(seed)
    h = synthetic_hyperparams()
    half = SYNTHETIC_N_TUPLES // 2
    X = rng.uniform(0.0, 1.0, size=(SYNTHETIC_N_TUPLES, 2))
    idx = np.repeat([1, 2], [half, SYNTHETIC_N_TUPLES - half])
    K = cov_arrays(h, X, idx, X, idx)
    draws = cholesky(add_jitter(K), lower=True) @ rng.standard_normal(SYNTHETIC_N_TUPLES)
    K[np.diag_indices_from(K)] += h.noise_var
    alpha = cho_solve(cho_factor(K, lower=True), draws)

    problem = SyntheticProblem(seed=seed, h=h, X=X, idx=idx, draws=draws, alpha=alpha, biases=[])
    grid = unit_grid()
    g2 = problem.latent(grid, 2)
    problem.biases = [0.0 if f is None else _bisect_bias(g2, f) for f in fractions]

    g1 = problem.target(grid)
    best = int(np.argmax(g1))
    x_opt, f_opt = resolve_maximum(problem.target, [[0.0, 1.0], [0.0, 1.0]], rng, starts=8, x0=grid[best])
    if f_opt < g1[best]:
        x_opt, f_opt = grid[best], float(g1[best])
    problem.x_opt, problem.f_opt = np.asarray(x_opt), float(f_opt)
    interior = bool(np.all((problem.x_opt > 1e-3) & (problem.x_opt < 1 - 1e-3)))
    logger.debug("synthetic seed %d: f_opt=%.4f at %s (interior=%s)", seed, f_opt, x_opt, interior)
    return problem


# ─── Hartmann-6D ──────────────────────────────────────────────────────────────

HARTMANN_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
HARTMANN_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
], dtype=float)
HARTMANN_BETA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_OFFSET = 0.2561
HARTMANN_NOISE = 1e-3
HARTMANN_X_OPT = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])
HARTMANN_F_OPT = 3.32237 - HARTMANN_OFFSET


def hartmann6_value(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    inner = np.einsum("jk,njk->nj", HARTMANN_A, (x[:, None, :] - HARTMANN_P[None]) ** 2)
    return np.exp(-inner) @ HARTMANN_BETA - HARTMANN_OFFSET


def hartmann6_grad(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    diff = x[:, None, :] - HARTMANN_P[None]
    terms = HARTMANN_BETA[None, :] * np.exp(-np.einsum("jk,njk->nj", HARTMANN_A, diff ** 2))
    return -2.0 * np.einsum("nj,jk,njk->nk", terms, HARTMANN_A, diff)


def hartmann6(
    seed: int = 0, cost_target: float = DEFAULT_COST_TARGET, cost_aux: float = DEFAULT_COST_AUX
) -> Problem:
    """Hartmann-6D target with the auxiliary ``y_2 = +1`` iff ``f_1 >= 0``.

    The seed only identifies the problem instance; the function is fixed.
    """
    std = np.sqrt(HARTMANN_NOISE)

    def target_oracle(x, rng):
        return float(hartmann6_value(x)[0] + std * rng.standard_normal())

    def aux_oracle(x, rng):
        return 1.0 if hartmann6_value(x)[0] >= 0.0 else -1.0

    return Problem(
        name="hartmann6",
        bounds=np.tile([0.0, 1.0], (6, 1)),
        oracles=[target_oracle, aux_oracle],
        costs=[ConstantCost(cost_target), ConstantCost(cost_aux)],
        target=hartmann6_value,
        x_opt=HARTMANN_X_OPT.copy(),
        f_opt=HARTMANN_F_OPT,
        hyperparams=None,
        meta={"seed": seed},
    )
