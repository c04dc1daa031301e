"""Cost-sensitive Bayesian optimization loop.

Each iteration fits the mixed model, builds an acquisition (MT-PES, the
target-only PES baseline, or MT-ES), picks the input tuple with the best
acquisition value per unit cost that still fits the remaining budget,
evaluates it and records the posterior-mean recommendation.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from . import search
from .ep import MixedGP
from .errors import BudgetExhausted, ConfigurationError, MixedBOError, NumericalError, OracleError
from .es import MTESAcquisition, default_grid
from .features import sample_maximizers
from .kernel import TARGET, Hyperparams, InputTuple, ObservationSet
from .pes import MTPESAcquisition
from .problems import Problem, default_hyperparams, immediate_regret

logger = logging.getLogger(__name__)

ALGORITHMS = ("pes", "mtes", "mtpes")
HYPER_GROUPS = ("gamma", "P", "s", "m", "noise_var")

REFIT_EVERY_BELOW = 50
REFIT_PERIOD = 5
REGRET_FLOOR = 1e-10

# RNG stream ids within one step
_INIT, _ORACLE, _MAXIMIZERS, _SEARCH, _ES, _FIT, _RECOMMEND = range(7)


class Acquisition(Protocol):
    def evaluate(self, x: np.ndarray, i: int) -> np.ndarray: ...


# ── Configuration ────────────────────────────────────────────────────────────

@dataclass
class RunConfig:
    """Every setting of one BO run."""

    algo: str = "mtpes"
    budget: float = 2500.0
    warm_frac: float = 0.1
    n_samples: int = 50
    n_features: int = 200
    n_candidates: int = 30
    n_draws: int = 200
    n_outer: int = 10
    es_grid: int = 2000
    acq_sobol: int = 1000
    acq_refine: int = 5
    refine_evals: int = 50
    maximizer_starts: int = 10
    ei_xi: float = 0.0
    fixed: List[str] = field(default_factory=list)
    fit_starts: int = 5
    fit_iters: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algo not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if self.budget <= 0:
            raise ConfigurationError(f"budget must be positive, got {self.budget}")
        if not 0.0 <= self.warm_frac < 1.0:
            raise ConfigurationError(f"warm_frac must lie in [0, 1), got {self.warm_frac}")
        fixed = list(HYPER_GROUPS) if "all" in self.fixed else list(self.fixed)
        unknown = set(fixed) - set(HYPER_GROUPS)
        if unknown:
            raise ConfigurationError(f"unknown hyperparameter groups in fixed: {sorted(unknown)}")
        self.fixed = fixed
        for name in ("n_samples", "n_features", "n_draws", "n_outer", "acq_sobol", "maximizer_starts", "fit_starts"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.n_candidates < 2:
            raise ConfigurationError("n_candidates must be >= 2")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        """Build from a mapping; unknown keys are a configuration error."""
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown run settings: {sorted(unknown)}")
        return cls(**d)


# ── History ──────────────────────────────────────────────────────────────────

@dataclass
class StepRecord:
    step: int
    output_index: int
    x: List[float]
    y: float
    cost: float
    cum_cost: float
    recommendation: List[float]
    regret: Optional[float] = None
    acq_value: Optional[float] = None
    n_samples: Optional[int] = None
    phase: str = "bo"

    @property
    def log10_ir(self) -> Optional[float]:
        if self.regret is None:
            return None
        return float(np.log10(max(self.regret, REGRET_FLOOR)))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["log10_ir"] = self.log10_ir
        return {k: v for k, v in d.items() if v is not None}


@dataclass
class History:
    budget: float
    records: List[StepRecord] = field(default_factory=list)
    aborted: bool = False
    abort_reason: Optional[str] = None
    wall_time: float = 0.0
    hyperparams: Optional[Hyperparams] = None

    @property
    def spent(self) -> float:
        return self.records[-1].cum_cost if self.records else 0.0

    @property
    def remaining(self) -> float:
        return self.budget - self.spent

    def append(self, record: StepRecord) -> None:
        if record.cum_cost > self.budget + 1e-9:
            raise BudgetExhausted(self.remaining)
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)


# ── Hyperparameter fitting ───────────────────────────────────────────────────

@dataclass
class HyperparamFit:
    h: Hyperparams
    ok: bool
    log_marginal: float


_LOG_BOUNDS = {"gamma": (np.log(1e-4), np.log(1e6)), "P": (np.log(1e-4), np.log(1e6)),
               "noise_var": (np.log(1e-8), np.log(10.0))}


def _pack(h: Hyperparams, free: Sequence[str]) -> Tuple[np.ndarray, List[Tuple[Optional[float], Optional[float]]]]:
    parts, bounds = [], []
    for name in free:
        value = np.atleast_1d(np.asarray(getattr(h, name), dtype=float)).ravel()
        if name in _LOG_BOUNDS:
            parts.append(np.log(value))
            bounds += [_LOG_BOUNDS[name]] * value.size
        else:
            parts.append(value)
            bounds += [(None, None)] * value.size
    return np.concatenate(parts) if parts else np.zeros(0), bounds


def _unpack(theta: np.ndarray, h: Hyperparams, free: Sequence[str]) -> Hyperparams:
    values = {name: getattr(h, name) for name in HYPER_GROUPS}
    pos = 0
    for name in free:
        shape = np.shape(values[name])
        size = int(np.prod(shape)) if shape else 1
        chunk = theta[pos:pos + size]
        pos += size
        chunk = np.exp(chunk) if name in _LOG_BOUNDS else chunk
        values[name] = float(chunk[0]) if not shape else chunk.reshape(shape)
    return Hyperparams(**values)


def fit_hyperparams(
    obs: ObservationSet,
    init: Hyperparams,
    fixed: Sequence[str] = (),
    rng: Optional[np.random.Generator] = None,
    starts: int = 5,
    iters: int = 100,
) -> HyperparamFit:
    """Type-II maximum likelihood on the EP evidence, multi-start L-BFGS-B."""
    if len(obs) < 2:
        raise ConfigurationError("need at least 2 observations to fit hyperparameters")
    free = [g for g in HYPER_GROUPS if g not in set(fixed)]
    if not free:
        return HyperparamFit(h=init, ok=True, log_marginal=MixedGP(init, obs).log_marginal())

    rng = np.random.default_rng(0) if rng is None else rng
    theta0, bounds = _pack(init, free)

    def objective(theta: np.ndarray) -> float:
        try:
            value = MixedGP(_unpack(theta, init, free), obs).log_marginal()
        except MixedBOError:
            return 1e10
        return -value if np.isfinite(value) else 1e10

    best_theta, best_value = None, np.inf
    for k in range(starts):
        start = theta0 if k == 0 else theta0 + 0.5 * rng.standard_normal(theta0.size)
        lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
        hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
        start = np.clip(start, lo, hi)
        try:
            res = minimize(objective, start, method="L-BFGS-B", bounds=bounds, options={"maxiter": iters})
        except (ValueError, ArithmeticError) as exc:
            logger.debug("Hyperparameter start %d failed: %s", k, exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_value and res.fun < 1e10:
            best_theta, best_value = res.x, float(res.fun)

    if best_theta is None:
        logger.warning("All %d hyperparameter fits failed; keeping the initial values", starts)
        return HyperparamFit(h=init, ok=False, log_marginal=float("nan"))
    return HyperparamFit(h=_unpack(best_theta, init, free), ok=True, log_marginal=-best_value)


# ── Selection ────────────────────────────────────────────────────────────────

def select_next(
    gp: MixedGP,
    acq: Acquisition,
    problem: Problem,
    remaining: float,
    rng: np.random.Generator,
    outputs: Optional[Sequence[int]] = None,
    n_sobol: int = search.SOBOL_POINTS,
    n_refine: int = search.REFINE_POINTS,
    refine_evals: int = search.REFINE_EVALS,
) -> Tuple[InputTuple, float]:
    """Maximize acquisition per unit cost over affordable, unobserved tuples.

    Negative acquisition values are treated as 0 here only.  Ties go to the
    lower cost, then the lower output index, then the lexicographically
    smaller point.  Returns the tuple and its raw acquisition value.
    """
    outputs = list(range(1, problem.M + 1)) if outputs is None else list(outputs)
    best_key, best = None, None
    for i in outputs:
        def ratio(x: np.ndarray, i: int = i) -> np.ndarray:
            cost = problem.cost(i, x)
            value = np.maximum(acq.evaluate(x, i), 0.0)
            return np.where(cost <= remaining + 1e-12, value / cost, -np.inf)

        pts, values = search.maximize(
            ratio, problem.bounds, rng, n_sobol, n_refine, refine_evals,
            mask=lambda x, i=i: gp.obs.contains_points(x, i),
        )
        ok = np.isfinite(values)
        if not np.any(ok):
            continue
        costs = problem.cost(i, pts)
        for k in np.flatnonzero(ok):
            key = (-float(values[k]), float(costs[k]), i, tuple(pts[k]))
            if best_key is None or key < best_key:
                best_key, best = key, (pts[k], i)
    if best is None:
        raise BudgetExhausted(remaining)
    x, i = best
    raw = float(acq.evaluate(x[None, :], i)[0])
    return InputTuple(x, i), raw


def recommend(
    gp: MixedGP,
    bounds: np.ndarray,
    rng: np.random.Generator,
    n_sobol: int = search.SOBOL_POINTS,
    n_refine: int = search.REFINE_POINTS,
    refine_evals: int = search.REFINE_EVALS,
) -> np.ndarray:
    """Maximizer of the target posterior mean."""
    x, _ = search.argmax(lambda z: gp.mean_var(z, TARGET)[0], bounds, rng, n_sobol, n_refine, refine_evals)
    return x


# ── Run loop ─────────────────────────────────────────────────────────────────

StepCallback = Callable[[StepRecord, Dict[str, Any]], None]


class Engine:
    """State of one BO run; ``run()`` drives it to budget exhaustion."""

    def __init__(self, problem: Problem, cfg: RunConfig, on_step: Optional[StepCallback] = None):
        if cfg.algo == "pes":
            problem = problem.target_only()
        self.problem = problem
        self.cfg = cfg
        self.on_step = on_step
        h = problem.hyperparams or default_hyperparams(problem.d, problem.M)
        if h.M != problem.M or h.d != problem.d:
            raise ConfigurationError(
                f"hyperparameters describe M={h.M}, d={h.d}; problem has M={problem.M}, d={problem.d}"
            )
        self.h = h
        self.obs = ObservationSet.empty(problem.d)
        self.history = History(budget=cfg.budget)
        self._since_fit = 0

    def stream(self, step: int, k: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, step, k])

    @property
    def aux_spent(self) -> float:
        return sum(r.cost for r in self.history.records if r.output_index != TARGET)

    def _maybe_refit(self, step: int) -> None:
        cfg = self.cfg
        due = len(self.obs) < REFIT_EVERY_BELOW or self._since_fit >= REFIT_PERIOD
        if len(self.obs) < 2 or not due or set(cfg.fixed) == set(HYPER_GROUPS):
            self._since_fit += 1
            return
        fit = fit_hyperparams(self.obs, self.h, cfg.fixed, self.stream(step, _FIT), cfg.fit_starts, cfg.fit_iters)
        if fit.ok:
            self.h = fit.h
        self._since_fit = 0

    def _acquisition(self, gp: MixedGP, step: int) -> Tuple[Acquisition, Optional[int]]:
        cfg = self.cfg
        if cfg.algo == "mtes":
            grid = default_grid(self.problem.bounds, self.stream(step, _SEARCH), cfg.es_grid)
            acq = MTESAcquisition.precompute(
                gp, grid, self.stream(step, _ES), cfg.n_candidates, cfg.n_draws, cfg.n_outer, cfg.ei_xi
            )
            return acq, None
        batch = sample_maximizers(
            gp, self.problem.bounds, self.stream(step, _MAXIMIZERS),
            cfg.n_samples, cfg.n_features, cfg.maximizer_starts,
        )
        acq = MTPESAcquisition.precompute(gp, batch)
        return acq, acq.n_samples

    def _record(self, step: int, t: InputTuple, y: float, phase: str,
                acq_value: Optional[float] = None, n_samples: Optional[int] = None) -> StepRecord:
        cost = float(self.problem.cost(t.i, t.array)[0])
        self.obs = self.obs.append(t, y)
        gp = MixedGP(self.h, self.obs)
        rec = recommend(gp, self.problem.bounds, self.stream(step, _RECOMMEND),
                        self.cfg.acq_sobol, self.cfg.acq_refine, self.cfg.refine_evals)
        regret = immediate_regret(self.problem, rec) if self.problem.has_ground_truth else None
        record = StepRecord(
            step=step, output_index=t.i, x=[float(v) for v in t.x], y=y, cost=cost,
            cum_cost=self.history.spent + cost, recommendation=rec.tolist(), regret=regret,
            acq_value=acq_value, n_samples=n_samples, phase=phase,
        )
        self.history.append(record)
        if self.on_step is not None:
            self.on_step(record, {"hyperparams": self.h.to_dict()})
        return record

    def run(self) -> History:
        cfg, problem = self.cfg, self.problem
        start = time.monotonic()

        # ── Initialization: one uniformly random target evaluation ──
        x0 = problem.sample_points(self.stream(0, _INIT))[0]
        if problem.cost(TARGET, x0)[0] > cfg.budget:
            raise ConfigurationError(f"budget {cfg.budget} does not cover one target evaluation")
        try:
            y0 = problem.evaluate(x0, TARGET, self.stream(0, _ORACLE))
        except OracleError as exc:
            return self._abort(exc, start)
        self._record(0, InputTuple(x0, TARGET), y0, "init")

        step = 0
        while True:
            step += 1
            remaining = self.history.remaining
            if remaining < problem.min_cost() - 1e-12:
                break
            warm = problem.M > 1 and self.aux_spent < cfg.warm_frac * cfg.budget
            outputs = list(range(2, problem.M + 1)) if warm else None

            self._maybe_refit(step)
            try:
                gp = MixedGP(self.h, self.obs)
                acq, n_samples = self._acquisition(gp, step)
            except NumericalError as exc:
                return self._abort(exc, start)
            try:
                t, value = select_next(
                    gp, acq, problem, remaining, self.stream(step, _SEARCH), outputs,
                    cfg.acq_sobol, cfg.acq_refine, cfg.refine_evals,
                )
            except BudgetExhausted:
                if outputs is None:
                    break
                try:
                    t, value = select_next(
                        gp, acq, problem, remaining, self.stream(step, _SEARCH), None,
                        cfg.acq_sobol, cfg.acq_refine, cfg.refine_evals,
                    )
                except BudgetExhausted:
                    break
            try:
                y = problem.evaluate(t.array, t.i, self.stream(step, _ORACLE))
            except OracleError as exc:
                return self._abort(exc, start)
            rec = self._record(step, t, y, "warm" if warm else "bo", value, n_samples)
            logger.info(
                "step %d: output %d cost %.3g (cum %.4g/%.4g) acq=%.4g regret=%s",
                step, t.i, rec.cost, rec.cum_cost, cfg.budget, value,
                "n/a" if rec.regret is None else f"{rec.regret:.3g}",
            )

        self.history.wall_time = time.monotonic() - start
        self.history.hyperparams = self.h
        return self.history

    def _abort(self, exc: Exception, start: float) -> History:
        logger.error("Run aborted: %s", exc)
        self.history.aborted = True
        self.history.abort_reason = str(exc)
        self.history.wall_time = time.monotonic() - start
        self.history.hyperparams = self.h
        return self.history


def run(problem: Problem, budget: float, cfg: RunConfig, on_step: Optional[StepCallback] = None) -> History:
    if budget != cfg.budget:
        cfg = dataclasses.replace(cfg, budget=budget)
    return Engine(problem, cfg, on_step).run()
