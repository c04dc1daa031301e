"""Rich console output for benchmark, oracle and validation commands."""
from __future__ import annotations

from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.text import Text

from .results import RunRecord

if TYPE_CHECKING:
    from .validate import CheckResult


def fmt_duration(seconds: Optional[float]) -> str:
    if seconds is None:
        return "-"
    seconds = int(round(seconds))
    h, rem = divmod(seconds, 3600)
    m, s = divmod(rem, 60)
    if h:
        return f"{h}h{m:02d}m{s:02d}s"
    if m:
        return f"{m}m{s:02d}s"
    return f"{s}s"


def _ir_text(value: Optional[float]) -> Text:
    if value is None:
        return Text("n/a", style="dim")
    style = "green" if value < -3 else "yellow" if value < -1 else "red"
    return Text(f"{value:.2f}", style=style)


def _status_text(aborted: bool) -> Text:
    if aborted:
        return Text("✖ ABORTED", style="bold red")
    return Text("✔ DONE", style="bold green")


def bench_progress(console: Console) -> Progress:
    return Progress(
        TextColumn("[bold]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
    )


def make_runs_table(records: Sequence[RunRecord]) -> Table:
    table = Table(
        box=box.SIMPLE,
        show_header=True,
        header_style="bold dim",
        padding=(0, 1),
        title="[bold]Runs[/bold]",
    )
    table.add_column("Problem", style="white", no_wrap=True)
    table.add_column("Algo", style="cyan", no_wrap=True)
    table.add_column("Seed", justify="right")
    table.add_column("Steps", justify="right")
    table.add_column("Target", justify="right", style="dim")
    table.add_column("Spent", justify="right")
    table.add_column("log10 IR", justify="right")
    table.add_column("Time", justify="right", style="dim")
    table.add_column("Status", no_wrap=True)

    for r in sorted(records, key=lambda r: (r.problem, r.algo, r.seed)):
        n_target = sum(1 for i in r.output_index if i == 1)
        table.add_row(
            r.problem,
            r.algo,
            str(r.seed),
            str(len(r)),
            str(n_target),
            f"{r.cum_cost[-1]:.4g}" if len(r) else "0",
            _ir_text(r.log10_ir[-1] if len(r) else None),
            fmt_duration(r.wall_time),
            _status_text(r.aborted),
        )
    return table


def make_aggregate_table(rows: Sequence[Dict[str, Any]], points: int = 8) -> Table:
    """Mean log10 IR per algorithm at a few evenly spaced costs."""
    costs = sorted({row["cost"] for row in rows})
    if len(costs) > points:
        picks = [costs[round(k * (len(costs) - 1) / (points - 1))] for k in range(points)]
    else:
        picks = costs
    algos = sorted({row["algo"] for row in rows})
    lookup = {(row["algo"], row["cost"]): row for row in rows}

    table = Table(box=box.SIMPLE, header_style="bold dim", title="[bold]Mean log10 IR by cost[/bold]")
    table.add_column("Cost", justify="right", style="dim")
    for algo in algos:
        table.add_column(algo, justify="right")
    for c in picks:
        cells: List[Any] = [f"{c:.4g}"]
        for algo in algos:
            row = lookup.get((algo, c))
            if row is None:
                cells.append(Text("-", style="dim"))
            else:
                cells.append(f"{row['mean_log10_ir']:.2f} ± {row['stderr']:.2f}")
        table.add_row(*cells)
    return table


def make_validation_table(results: Iterable["CheckResult"]) -> Table:
    table = Table(box=box.SIMPLE, header_style="bold dim", title="[bold]Numerical checks[/bold]")
    table.add_column("Suite", style="white", no_wrap=True)
    table.add_column("Check", style="dim")
    table.add_column("Result", no_wrap=True)
    table.add_column("Detail", style="dim")
    for r in results:
        result = Text("PASS", style="bold green") if r.passed else Text("FAIL", style="bold red")
        table.add_row(r.suite, r.name, result, r.detail)
    return table


def print_oracle_summary(console: Console, rho: float, n_points: int, bins_used: int,
                         bins_excluded: int, threshold: float = 0.7) -> None:
    style = "bold green" if rho > threshold else "bold red"
    body = Text()
    body.append("Spearman rank correlation: ", style="white")
    body.append(f"{rho:.3f}", style=style)
    body.append(f"  ({n_points} query points)\n", style="dim")
    body.append(f"Maximizer bins used: {bins_used}, excluded: {bins_excluded}", style="dim")
    console.print(Panel(body, title="[bold]MT-PES vs rejection sampling[/bold]", padding=(0, 1)))
