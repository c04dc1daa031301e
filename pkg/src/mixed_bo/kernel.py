"""Mixed-type convolved multi-output GP prior.

Every output ``f_i`` is a biased convolution of ``Q`` shared latent GPs
with per-output Gaussian smoothing kernels.  With diagonal precisions the
cross-covariance is a sum of Gaussian densities::

    cov[f_i(x), f_j(x')] = sum_q s[i,q] s[j,q] N(x - x' | 0, 1/gamma_q + 1/P_i + 1/P_j)

Output indices are 1-based throughout the package; index 1 is the
continuous target, indices 2..M are binary auxiliaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError

TARGET = 1

# Two inputs closer than this in max-norm count as the same point.
DUPLICATE_TOL = 1e-10

# Relative diagonal jitter added before every Gram factorization.
JITTER = 1e-8

_LOG_2PI = float(np.log(2.0 * np.pi))
_CHUNK_ROWS = 2048


def _frozen(a: Any, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ConfigurationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ─── Domain types ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class InputTuple:
    """A point ``x`` paired with the output index ``i`` it is evaluated on."""

    x: Tuple[float, ...]
    i: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", tuple(float(v) for v in np.ravel(self.x)))
        object.__setattr__(self, "i", int(self.i))
        if self.i < 1:
            raise ConfigurationError(f"output index must be >= 1, got {self.i}")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    @property
    def d(self) -> int:
        return len(self.x)

    def in_box(self, bounds: np.ndarray) -> bool:
        b = np.asarray(bounds, dtype=float)
        x = self.array
        return bool(np.all(x >= b[:, 0]) and np.all(x <= b[:, 1]))


@dataclass(frozen=True, eq=False)
class Hyperparams:
    """All parameters of the mixed-type CMOGP.

    gamma:     (Q, d) latent precisions, diagonal of each Gamma_q.
    P:         (M, d) smoothing precisions, diagonal of each P_i.
    s:         (M, Q) signal amplitudes sigma_{s_i q}.
    m:         (M,)   output biases.
    noise_var: target observation noise variance.
    """

    gamma: np.ndarray
    P: np.ndarray
    s: np.ndarray
    m: np.ndarray
    noise_var: float

    def __post_init__(self) -> None:
        gamma = _frozen(self.gamma, 2, "gamma")
        P = _frozen(self.P, 2, "P")
        s = _frozen(self.s, 2, "s")
        m = _frozen(self.m, 1, "m")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "noise_var", float(self.noise_var))

        Q, d = gamma.shape
        M = P.shape[0]
        if Q < 1 or M < 1 or d < 1:
            raise ConfigurationError(f"need Q, M, d >= 1; got Q={Q}, M={M}, d={d}")
        if P.shape[1] != d:
            raise ConfigurationError(f"P has {P.shape[1]} columns, gamma has {d}")
        if s.shape != (M, Q):
            raise ConfigurationError(f"s must have shape ({M}, {Q}), got {s.shape}")
        if m.shape != (M,):
            raise ConfigurationError(f"m must have length {M}, got {m.shape[0]}")
        if not (np.all(gamma > 0) and np.all(P > 0)):
            raise ConfigurationError("all precision entries must be strictly positive")
        if not self.noise_var > 0:
            raise ConfigurationError(f"noise_var must be > 0, got {self.noise_var}")

    @property
    def d(self) -> int:
        return int(self.gamma.shape[1])

    @property
    def M(self) -> int:
        return int(self.P.shape[0])

    @property
    def Q(self) -> int:
        return int(self.gamma.shape[0])

    def prior_var(self, i: int) -> float:
        """Prior variance sigma_ii(x, x), the same at every x."""
        return float(cov_arrays(self, np.zeros((1, self.d)), [i], np.zeros((1, self.d)), [i])[0, 0])

    def subset(self, outputs: Sequence[int]) -> "Hyperparams":
        """Hyperparameters of the sub-model over the given (1-based) outputs."""
        rows = [int(i) - 1 for i in outputs]
        return Hyperparams(
            gamma=self.gamma, P=self.P[rows], s=self.s[rows], m=self.m[rows],
            noise_var=self.noise_var,
        )

    def with_bias(self, i: int, value: float) -> "Hyperparams":
        m = self.m.copy()
        m[i - 1] = value
        return Hyperparams(gamma=self.gamma, P=self.P, s=self.s, m=m, noise_var=self.noise_var)

    def to_dict(self) -> Dict[str, Any]:
        """Serialize with the configuration file keys."""
        return {
            "d": self.d,
            "M": self.M,
            "Q": self.Q,
            "gamma": self.gamma.tolist(),
            "P": self.P.tolist(),
            "s": self.s.tolist(),
            "m": self.m.tolist(),
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Hyperparams":
        """Build from the configuration keys; ``d``, ``M``, ``Q`` are cross-checked."""
        known = {"d", "M", "Q", "gamma", "P", "s", "m", "noise_var"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown hyperparameter keys: {sorted(unknown)}")
        missing = {"gamma", "P", "s", "m", "noise_var"} - set(d)
        if missing:
            raise ConfigurationError(f"missing hyperparameter keys: {sorted(missing)}")
        gamma = np.atleast_2d(np.asarray(d["gamma"], dtype=float))
        P = np.atleast_2d(np.asarray(d["P"], dtype=float))
        s = np.asarray(d["s"], dtype=float)
        if s.ndim == 1:
            s = s.reshape(-1, 1) if gamma.shape[0] == 1 else s.reshape(1, -1)
        h = cls(gamma=gamma, P=P, s=s, m=np.atleast_1d(d["m"]), noise_var=d["noise_var"])
        for key, actual in (("d", h.d), ("M", h.M), ("Q", h.Q)):
            if key in d and int(d[key]) != actual:
                raise ConfigurationError(f"{key}={d[key]} disagrees with array shapes ({actual})")
        return h


# ─── Covariance ───────────────────────────────────────────────────────────────

def _check_points(h: Hyperparams, x: np.ndarray, idx: np.ndarray) -> None:
    if x.shape[1] != h.d:
        raise ConfigurationError(f"points have dimension {x.shape[1]}, model expects {h.d}")
    if idx.size and (idx.min() < 1 or idx.max() > h.M):
        raise ConfigurationError(f"output index outside 1..{h.M}")


def cov_arrays(
    h: Hyperparams,
    xa: np.ndarray,
    ia: Sequence[int],
    xb: np.ndarray,
    ib: Sequence[int],
) -> np.ndarray:
    """Prior cross-covariance between tuple sets given as point/index arrays."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    ia = np.asarray(ia, dtype=int).reshape(-1)
    ib = np.asarray(ib, dtype=int).reshape(-1)
    if ia.size == 1 and xa.shape[0] > 1:
        ia = np.full(xa.shape[0], ia[0])
    if ib.size == 1 and xb.shape[0] > 1:
        ib = np.full(xb.shape[0], ib[0])
    _check_points(h, xa, ia)
    _check_points(h, xb, ib)

    inv_p = 1.0 / h.P
    inv_g = 1.0 / h.gamma
    pb = inv_p[ib - 1]
    out = np.zeros((xa.shape[0], xb.shape[0]))
    for start in range(0, xa.shape[0], _CHUNK_ROWS):
        rows = slice(start, start + _CHUNK_ROWS)
        diff2 = (xa[rows, None, :] - xb[None, :, :]) ** 2
        pa = inv_p[ia[rows] - 1]
        for q in range(h.Q):
            var = inv_g[q] + pa[:, None, :] + pb[None, :, :]
            log_dens = -0.5 * np.sum(diff2 / var + np.log(var) + _LOG_2PI, axis=-1)
            amp = np.outer(h.s[ia[rows] - 1, q], h.s[ib - 1, q])
            out[rows] += amp * np.exp(log_dens)
    return out


def prior_var_arrays(h: Hyperparams, idx: Sequence[int]) -> np.ndarray:
    """Prior variance sigma_ii(x, x) for each output index in ``idx``."""
    idx = np.asarray(idx, dtype=int).reshape(-1)
    var = 1.0 / h.gamma[None, :, :] + 2.0 / h.P[idx - 1][:, None, :]
    log_dens = -0.5 * np.sum(np.log(var) + _LOG_2PI, axis=-1)
    return np.sum(h.s[idx - 1] ** 2 * np.exp(log_dens), axis=1)


def stack_tuples(tuples: Iterable[InputTuple]) -> Tuple[np.ndarray, np.ndarray]:
    """Split tuples into an ``(n, d)`` point array and an ``(n,)`` index array."""
    tuples = list(tuples)
    if not tuples:
        raise ConfigurationError("empty tuple list")
    d = tuples[0].d
    if any(t.d != d for t in tuples):
        raise ConfigurationError("tuples of mixed dimension")
    X = np.array([t.x for t in tuples], dtype=float).reshape(len(tuples), d)
    idx = np.array([t.i for t in tuples], dtype=int)
    return X, idx


def cross_cov(h: Hyperparams, a: InputTuple, b: InputTuple) -> float:
    """cov[f_i(x), f_j(x')] for ``a = <x, i>``, ``b = <x', j>``."""
    if a.d != h.d or b.d != h.d:
        raise ConfigurationError(f"tuple dimension does not match model dimension {h.d}")
    return float(cov_arrays(h, a.array[None, :], [a.i], b.array[None, :], [b.i])[0, 0])


def cov_matrix(h: Hyperparams, A: Sequence[InputTuple], B: Sequence[InputTuple]) -> np.ndarray:
    """Matrix of ``cross_cov`` over all pairs of ``A`` x ``B``."""
    xa, ia = stack_tuples(A)
    xb, ib = stack_tuples(B)
    return cov_arrays(h, xa, ia, xb, ib)


def prior_mean(h: Hyperparams, t: InputTuple) -> float:
    if not 1 <= t.i <= h.M:
        raise ConfigurationError(f"output index {t.i} outside 1..{h.M}")
    return float(h.m[t.i - 1])


def add_jitter(K: np.ndarray) -> np.ndarray:
    """Copy of a square Gram matrix with ``JITTER * max diag`` on the diagonal."""
    K = np.array(K, dtype=float)
    scale = float(np.max(np.abs(np.diag(K)))) if K.size else 0.0
    K[np.diag_indices_from(K)] += JITTER * max(scale, 1e-300)
    return K


# ─── Observations ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ObservationSet:
    """The mixed history: real target values and +/-1 auxiliary labels."""

    X: np.ndarray
    idx: np.ndarray
    y: np.ndarray
    tol: float = field(default=DUPLICATE_TOL)

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(0, 0) if X.size == 0 else X.reshape(1, -1)
        idx = np.array(self.idx, dtype=int).reshape(-1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if not (X.shape[0] == idx.size == y.size):
            raise ConfigurationError(
                f"observation arrays disagree in length: {X.shape[0]}, {idx.size}, {y.size}"
            )
        if idx.size and idx.min() < 1:
            raise ConfigurationError("output indices must be >= 1")
        aux = idx >= 2
        if np.any(aux) and not np.all(np.isin(y[aux], (-1.0, 1.0))):
            raise ConfigurationError("auxiliary observations must be exactly +1 or -1")
        for i in np.unique(idx):
            pts = X[idx == i]
            if pts.shape[0] > 1:
                dist = np.max(np.abs(pts[:, None, :] - pts[None, :, :]), axis=-1)
                np.fill_diagonal(dist, np.inf)
                if np.min(dist) < self.tol:
                    raise ConfigurationError(f"duplicate input tuple on output {i}")
        for arr in (X, idx, y):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, d: int, tol: float = DUPLICATE_TOL) -> "ObservationSet":
        return cls(X=np.zeros((0, d)), idx=np.zeros(0, dtype=int), y=np.zeros(0), tol=tol)

    @classmethod
    def from_tuples(
        cls,
        tuples: Sequence[InputTuple],
        values: Sequence[float],
        tol: float = DUPLICATE_TOL,
    ) -> "ObservationSet":
        X, idx = stack_tuples(tuples)
        return cls(X=X, idx=idx, y=np.asarray(values, dtype=float), tol=tol)

    def __len__(self) -> int:
        return int(self.idx.size)

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    @property
    def tuples(self) -> List[InputTuple]:
        return [InputTuple(x, i) for x, i in zip(self.X, self.idx)]

    @property
    def values(self) -> List[float]:
        return [float(v) for v in self.y]

    @property
    def target_mask(self) -> np.ndarray:
        return self.idx == TARGET

    @property
    def binary_mask(self) -> np.ndarray:
        return self.idx != TARGET

    @property
    def n_binary(self) -> int:
        return int(np.sum(self.binary_mask))

    @property
    def y_max(self) -> Optional[float]:
        """Largest noisy target value, or None before any target observation."""
        mask = self.target_mask
        return float(np.max(self.y[mask])) if np.any(mask) else None

    def contains_points(self, x: np.ndarray, i: int) -> np.ndarray:
        """Boolean mask over rows of ``x`` that duplicate an observation on output ``i``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pts = self.X[self.idx == i]
        if pts.shape[0] == 0:
            return np.zeros(x.shape[0], dtype=bool)
        dist = np.max(np.abs(x[:, None, :] - pts[None, :, :]), axis=-1)
        return np.min(dist, axis=1) < self.tol

    def contains(self, t: InputTuple) -> bool:
        return bool(self.contains_points(t.array[None, :], t.i)[0])

    def append(self, t: InputTuple, value: float) -> "ObservationSet":
        if len(self) and t.d != self.d:
            raise ConfigurationError(f"tuple dimension {t.d} != observation dimension {self.d}")
        X = np.vstack([self.X.reshape(-1, t.d), t.array[None, :]])
        return ObservationSet(
            X=X, idx=np.append(self.idx, t.i), y=np.append(self.y, float(value)), tol=self.tol,
        )

    def restrict(self, outputs: Sequence[int]) -> "ObservationSet":
        """Observations on the given outputs, re-indexed 1..len(outputs)."""
        outputs = [int(i) for i in outputs]
        keep = np.isin(self.idx, outputs)
        remap = {old: new for new, old in enumerate(outputs, start=1)}
        idx = np.array([remap[int(i)] for i in self.idx[keep]], dtype=int)
        return ObservationSet(X=self.X[keep], idx=idx, y=self.y[keep], tol=self.tol)

    def permuted(self, order: Sequence[int]) -> "ObservationSet":
        order = np.asarray(order, dtype=int)
        return ObservationSet(X=self.X[order], idx=self.idx[order], y=self.y[order], tol=self.tol)
