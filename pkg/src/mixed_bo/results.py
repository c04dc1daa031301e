"""Run records and CSV persistence.

One CSV per run with a fixed header, and an aggregate CSV holding the mean
and standard error of log10 immediate regret on a shared cost grid.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .engine import History

AGGREGATE_FILE = "aggregate.csv"
AGGREGATE_HEADER = ["algo", "cost", "mean_log10_ir", "stderr", "n_runs"]


def run_header(d: int) -> List[str]:
    return ["step", "output_index"] + [f"x{k}" for k in range(1, d + 1)] + ["y", "cost", "cum_cost", "log10_ir"]


def run_filename(problem: str, algo: str, seed: int) -> str:
    return f"{problem}-{algo}-seed{seed}.csv"


@dataclass
class RunRecord:
    """Per-step cost and regret trace of one run."""

    algo: str
    seed: int
    problem: str
    d: int
    steps: List[int] = field(default_factory=list)
    output_index: List[int] = field(default_factory=list)
    x: List[List[float]] = field(default_factory=list)
    y: List[float] = field(default_factory=list)
    cost: List[float] = field(default_factory=list)
    cum_cost: List[float] = field(default_factory=list)
    log10_ir: List[Optional[float]] = field(default_factory=list)
    wall_time: Optional[float] = None
    aborted: bool = False

    @classmethod
    def from_history(cls, history: History, algo: str, seed: int, problem: str, d: int) -> "RunRecord":
        r = cls(algo=algo, seed=seed, problem=problem, d=d,
                wall_time=history.wall_time, aborted=history.aborted)
        for rec in history.records:
            r.steps.append(rec.step)
            r.output_index.append(rec.output_index)
            r.x.append(list(rec.x))
            r.y.append(rec.y)
            r.cost.append(rec.cost)
            r.cum_cost.append(rec.cum_cost)
            r.log10_ir.append(rec.log10_ir)
        return r

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunRecord":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def ir_at(self, budget: float) -> Optional[float]:
        """log10 IR of the last step whose cumulative cost is within ``budget``."""
        value = None
        for c, ir in zip(self.cum_cost, self.log10_ir):
            if c > budget + 1e-9:
                break
            value = ir
        return value


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def write_run_csv(record: RunRecord, out_dir: Path) -> Path:
    path = Path(out_dir) / run_filename(record.problem, record.algo, record.seed)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(run_header(record.d))
        for k in range(len(record)):
            w.writerow(
                [record.steps[k], record.output_index[k]]
                + [_fmt(v) for v in record.x[k]]
                + [_fmt(record.y[k]), _fmt(record.cost[k]), _fmt(record.cum_cost[k]), _fmt(record.log10_ir[k])]
            )
    return path


def read_run_csv(path: Path, algo: str = "", seed: int = 0, problem: str = "") -> RunRecord:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("x"))
    r = RunRecord(algo=algo, seed=seed, problem=problem, d=d)
    for row in body:
        r.steps.append(int(row[0]))
        r.output_index.append(int(row[1]))
        r.x.append([float(v) for v in row[2:2 + d]])
        r.y.append(float(row[2 + d]))
        r.cost.append(float(row[3 + d]))
        r.cum_cost.append(float(row[4 + d]))
        r.log10_ir.append(float(row[5 + d]) if row[5 + d] else None)
    return r


def cost_grid(records: Sequence[RunRecord], step: float) -> np.ndarray:
    """Multiples of ``step`` from the first cost every run has reached to the largest spend."""
    start = max(r.cum_cost[0] for r in records if len(r))
    stop = max(r.cum_cost[-1] for r in records if len(r))
    first = np.ceil(start / step - 1e-9) * step
    return np.arange(first, stop + 0.5 * step, step)


def aggregate(records: Sequence[RunRecord], step: float) -> List[Dict[str, Any]]:
    """Mean and standard error of log10 IR per algorithm on the cost grid."""
    rows: List[Dict[str, Any]] = []
    by_algo: Dict[str, List[RunRecord]] = {}
    for r in records:
        if len(r):
            by_algo.setdefault(r.algo, []).append(r)
    for algo in sorted(by_algo):
        runs = by_algo[algo]
        for c in cost_grid(runs, step):
            vals = [v for v in (r.ir_at(c) for r in runs) if v is not None]
            if not vals:
                continue
            arr = np.asarray(vals, dtype=float)
            stderr = float(np.std(arr, ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
            rows.append({"algo": algo, "cost": float(c), "mean_log10_ir": float(np.mean(arr)),
                         "stderr": stderr, "n_runs": int(arr.size)})
    return rows


def write_aggregate_csv(rows: Sequence[Dict[str, Any]], out_dir: Path) -> Path:
    path = Path(out_dir) / AGGREGATE_FILE
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=AGGREGATE_HEADER)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return path
