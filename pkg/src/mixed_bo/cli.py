"""Command-line entry point for mixed-bo."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from scipy.stats import spearmanr

from . import __version__
from .config import FileConfig, load_config
from .display import (
    bench_progress,
    make_aggregate_table,
    make_runs_table,
    make_validation_table,
    print_oracle_summary,
)
from .engine import ALGORITHMS, RunConfig, StepRecord, run
from .ep import MixedGP
from .errors import ConfigurationError, MixedBOError
from .features import sample_maximizers
from .kernel import TARGET
from .oracle import acquisition_state, query_grid, rs_oracle_surface
from .pes import MTPESAcquisition
from .problems import DEFAULT_COST_AUX, DEFAULT_COST_TARGET, Problem, gen_synthetic, hartmann6
from .results import RunRecord, aggregate, write_aggregate_csv, write_run_csv
from .run_log import EVENTS_FILE, RunLogger, write_metadata
from .validate import SUITES, run_suites

logger = logging.getLogger("mixed_bo")


DESCRIPTION = """\
Cost-sensitive Bayesian optimization of a continuous target with cheap
binary auxiliary outputs.

Commands:
  bench       run PES / MT-ES / MT-PES on the synthetic or Hartmann-6D problems
  oracle      compare MT-PES with the rejection-sampling reference on a 2-D grid
  maximizers  sample target maximizers from the joint and the target-only model
  validate    run the numerical reference checks
"""


def _fraction(value: str) -> Optional[float]:
    if value.lower() in ("none", "zero"):
        return None
    try:
        f = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a fraction or 'none', got {value!r}")
    if not 0.0 < f < 1.0:
        raise argparse.ArgumentTypeError(f"fraction must lie in (0, 1), got {f}")
    return f


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mixed-bo",
        description=DESCRIPTION,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", "-V", action="version", version=f"mixed-bo {__version__}")
    p.add_argument("--verbose", "-v", action="store_true", default=False, help="Debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    # ── bench ────────────────────────────────────────────────────────────────
    b = sub.add_parser("bench", help="Run the benchmark problems")
    b.add_argument("problem", choices=("synthetic", "hartmann"))
    b.add_argument("--algo", nargs="+", choices=ALGORITHMS, default=list(ALGORITHMS),
                   help="Algorithms to run (default: all)")
    b.add_argument("--budget", type=float, default=None, metavar="COST",
                   help="Evaluation budget per run (default: 2500 or the config file)")
    b.add_argument("--seeds", type=int, default=5, metavar="N", help="Runs per algorithm and problem (default: 5)")
    b.add_argument("--problems", type=int, default=1, metavar="N",
                   help="Synthetic problem instances (default: 1; ignored for hartmann)")
    b.add_argument("--warm-frac", type=float, default=None, metavar="F",
                   help="Share of the budget spent on auxiliaries first (default: 0.1)")
    b.add_argument("--features", type=int, default=None, metavar="M", help="Random features per sample (default: 200)")
    b.add_argument("--samples", type=int, default=None, metavar="S", help="Maximizer samples (default: 50)")
    b.add_argument("--candidates", type=int, default=None, metavar="K", help="MT-ES candidates (default: 30)")
    b.add_argument("--cost-target", type=float, default=DEFAULT_COST_TARGET, metavar="C",
                   help=f"Cost of a target evaluation (default: {DEFAULT_COST_TARGET:g})")
    b.add_argument("--cost-aux", type=float, nargs="+", default=[DEFAULT_COST_AUX], metavar="C",
                   help=f"Cost of each auxiliary evaluation; one value or one per auxiliary "
                        f"(default: {DEFAULT_COST_AUX:g})")
    b.add_argument("--aux-fraction", type=_fraction, nargs="+", default=[0.2], metavar="F",
                   help="Positive-label fraction per synthetic auxiliary; 'none' fixes the bias at 0 "
                        "(default: 0.2). Several values add several auxiliaries.")
    b.add_argument("--config", type=Path, default=None, metavar="PATH", help="YAML file with hyperparams/run sections")
    b.add_argument("--out", type=Path, default=Path("results"), metavar="DIR", help="Output directory (default: results)")
    b.add_argument("--jobs", "-j", type=int, default=1, metavar="N", help="Parallel worker processes (default: 1)")

    # ── oracle ───────────────────────────────────────────────────────────────
    o = sub.add_parser("oracle", help="MT-PES vs rejection-sampling surface on a 2-D synthetic problem")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--grid", type=int, default=50, metavar="SIDE", help="Query grid side (default: 50)")
    o.add_argument("--n-samples", type=int, default=20_000, metavar="N",
                   help="Joint posterior draws for the reference (default: 20000)")
    o.add_argument("--samples", type=int, default=50, metavar="S", help="MT-PES maximizer samples (default: 50)")
    o.add_argument("--features", type=int, default=200, metavar="M")
    o.add_argument("--n-target", type=int, default=5)
    o.add_argument("--n-aux", type=int, default=50)
    o.add_argument("--output-index", type=int, default=2, choices=(1, 2))
    o.add_argument("--out", type=Path, default=Path("oracle.csv"), metavar="PATH")

    # ── maximizers ───────────────────────────────────────────────────────────
    m = sub.add_parser("maximizers", help="Target maximizers sampled from the joint vs target-only model")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--samples", type=int, default=200, metavar="S")
    m.add_argument("--features", type=int, default=200, metavar="M")
    m.add_argument("--n-target", type=int, default=5)
    m.add_argument("--n-aux", type=int, default=50)
    m.add_argument("--out", type=Path, default=Path("maximizers.csv"), metavar="PATH")

    # ── validate ─────────────────────────────────────────────────────────────
    v = sub.add_parser("validate", help="Run the numerical reference checks")
    v.add_argument("--suite", nargs="*", choices=list(SUITES), default=None, help="Suites to run (default: all)")

    return p


def _setup_logging(verbose: bool, console: Console) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=verbose, rich_tracebacks=verbose)],
        force=True,
    )


# ── bench ────────────────────────────────────────────────────────────────────

def _check_aux_costs(name: str, cost_aux: List[float], fractions: List[Optional[float]]) -> None:
    n_aux = len(fractions) if name == "synthetic" else 1
    if len(cost_aux) not in (1, n_aux):
        raise ConfigurationError(
            f"{name} has {n_aux} auxiliary output(s); --cost-aux takes 1 or {n_aux} values, got {len(cost_aux)}"
        )


def make_problem(name: str, instance: int, cost_target: float, cost_aux: List[float],
                 fractions: List[Optional[float]], file_cfg: FileConfig) -> Problem:
    _check_aux_costs(name, cost_aux, fractions)
    if name == "synthetic":
        problem = gen_synthetic(instance, fractions[0], fractions[1:]).as_problem(cost_target, cost_aux[0])
        if len(cost_aux) > 1:
            problem = problem.with_costs(cost_target, cost_aux)
    else:
        problem = hartmann6(instance, cost_target, cost_aux[0])
    if file_cfg.hyperparams is not None:
        problem = dataclasses.replace(problem, hyperparams=file_cfg.hyperparams)
    return problem


def bench_config(args: argparse.Namespace, file_cfg: FileConfig) -> RunConfig:
    """Run settings for ``bench``.

    Synthetic problems keep their true hyperparameters (``fixed: [all]``)
    unless the config file sets ``fixed`` itself.
    """
    defaults = {"fixed": ["all"]} if args.problem == "synthetic" else None
    return file_cfg.run_config(
        defaults,
        budget=args.budget, warm_frac=args.warm_frac, n_features=args.features,
        n_samples=args.samples, n_candidates=args.candidates,
    )


def _bench_task(task: Dict[str, Any]) -> Tuple[RunRecord, List[Tuple[Dict[str, Any], Dict[str, Any]]]]:
    """One run; top-level so worker processes can unpickle it."""
    problem = make_problem(task["problem"], task["instance"], task["cost_target"], task["cost_aux"],
                           task["fractions"], task["file_cfg"])
    cfg = RunConfig.from_dict(task["config"])
    steps: List[Tuple[Dict[str, Any], Dict[str, Any]]] = []

    def on_step(record: StepRecord, diagnostics: Dict[str, Any]) -> None:
        steps.append((record.to_dict(), diagnostics))

    history = run(problem, cfg.budget, cfg, on_step=on_step)
    return RunRecord.from_history(history, cfg.algo, cfg.seed, problem.name, problem.d), steps


def cmd_bench(args: argparse.Namespace, console: Console) -> int:
    file_cfg = load_config(args.config) if args.config else FileConfig()
    base = bench_config(args, file_cfg)
    _check_aux_costs(args.problem, args.cost_aux, args.aux_fraction)
    args.out.mkdir(parents=True, exist_ok=True)
    instances = range(args.problems) if args.problem == "synthetic" else range(1)
    fractions = list(args.aux_fraction)
    if args.problem == "hartmann" and len(fractions) > 1:
        logger.warning("hartmann has a single auxiliary; extra --aux-fraction values are ignored")

    tasks = []
    for instance in instances:
        for algo in args.algo:
            for seed in range(args.seeds):
                cfg = dataclasses.replace(base, algo=algo, seed=seed)
                tasks.append({
                    "problem": args.problem, "instance": instance, "cost_target": args.cost_target,
                    "cost_aux": list(args.cost_aux), "fractions": fractions, "file_cfg": file_cfg,
                    "config": cfg.to_dict(),
                })

    write_metadata(args.out, "bench " + args.problem, list(range(args.seeds)), base.to_dict(), {
        "algorithms": list(args.algo),
        "instances": list(instances),
        "cost_target": args.cost_target,
        "cost_aux": list(args.cost_aux),
        "aux_fractions": fractions,
        "hyperparams": None if file_cfg.hyperparams is None else file_cfg.hyperparams.to_dict(),
    })

    records: List[RunRecord] = []
    with RunLogger(args.out / EVENTS_FILE) as run_log, bench_progress(console) as progress:
        bar = progress.add_task(f"bench {args.problem}", total=len(tasks))

        def collect(task: Dict[str, Any], result) -> None:
            record, steps = result
            run_log.start_run(record.problem, record.algo, record.seed, task["config"])
            for step, diagnostics in steps:
                run_log.step(step, diagnostics)
            run_log.end_run(record)
            if record.aborted:
                logger.warning("%s %s seed %d aborted after %d steps",
                               record.problem, record.algo, record.seed, len(record))
            write_run_csv(record, args.out)
            records.append(record)
            progress.advance(bar)

        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                for task, result in zip(tasks, pool.map(_bench_task, tasks)):
                    collect(task, result)
        else:
            for task in tasks:
                collect(task, _bench_task(task))

    step = min(args.cost_target, *args.cost_aux)
    rows = aggregate(records, step)
    path = write_aggregate_csv(rows, args.out)
    console.print(make_runs_table(records))
    if rows:
        console.print(make_aggregate_table(rows))
    console.print(f"Wrote {len(records)} run files and {path}")
    return 0


# ── oracle / maximizers ──────────────────────────────────────────────────────

def cmd_oracle(args: argparse.Namespace, console: Console) -> int:
    gp, bounds = acquisition_state(args.seed, args.n_target, args.n_aux)
    if args.output_index > gp.h.M:
        raise MixedBOError(f"output index {args.output_index} outside 1..{gp.h.M}")
    grid = query_grid(args.grid)
    rng = np.random.default_rng([args.seed, 2])
    surface = rs_oracle_surface(gp, grid, args.output_index, args.n_samples, rng, bounds)
    batch = sample_maximizers(gp, bounds, np.random.default_rng([args.seed, 3]), args.samples, args.features)
    mtpes = MTPESAcquisition.precompute(gp, batch).evaluate(grid, args.output_index)

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x1", "x2", "rs", "mtpes"])
        for x, a, b in zip(grid, surface.values, mtpes):
            w.writerow([repr(float(x[0])), repr(float(x[1])), repr(float(a)), repr(float(b))])

    rho = float(spearmanr(surface.values, mtpes).correlation)
    print_oracle_summary(console, rho, grid.shape[0], surface.bins_used, surface.bins_excluded)
    console.print(f"Wrote {args.out}")
    return 0


def cmd_maximizers(args: argparse.Namespace, console: Console) -> int:
    gp, bounds = acquisition_state(args.seed, args.n_target, args.n_aux)
    target_gp = MixedGP(gp.h.subset([TARGET]), gp.obs.restrict([TARGET]))
    rows = []
    for label, model in (("joint", gp), ("target-only", target_gp)):
        batch = sample_maximizers(model, bounds, np.random.default_rng([args.seed, 4]), args.samples, args.features)
        for s in range(batch.S):
            rows.append([label, s, *[repr(float(v)) for v in batch.x_star[s]], repr(float(batch.f_max[s, 0]))])
        spread = np.std(batch.x_star, axis=0)
        console.print(f"{label:>12}: maximizer spread {np.round(spread, 4).tolist()}")

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "sample"] + [f"x{k}" for k in range(1, gp.h.d + 1)] + ["f_max"])
        w.writerows(rows)
    console.print(f"Wrote {args.out}")
    return 0


def cmd_validate(args: argparse.Namespace, console: Console) -> int:
    results = run_suites(args.suite)
    console.print(make_validation_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        console.print(f"[bold red]{len(failed)} of {len(results)} checks failed[/bold red]")
        return 1
    console.print(f"[bold green]All {len(results)} checks passed[/bold green]")
    return 0


COMMANDS = {
    "bench": cmd_bench,
    "oracle": cmd_oracle,
    "maximizers": cmd_maximizers,
    "validate": cmd_validate,
}


def main(argv: list | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    console = Console(stderr=True)
    _setup_logging(args.verbose, console)
    try:
        return COMMANDS[args.command](args, Console())
    except (MixedBOError, FileNotFoundError, KeyError) as exc:
        print(f"[error] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
