"""Append-only JSONL writer for benchmark runs.

One ``events.jsonl`` per bench invocation. Every line is a self-contained
JSON object with at least ``event_type`` and ``timestamp``:

    run_start   problem, algorithm, seed, resolved configuration
    step        one BO step (tuple, value, cost, recommendation, regret)
    run_end     status and wall time

``run-metadata.json`` next to it records every seed and the resolved
configuration of the invocation.
"""
from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

from . import __version__
from .engine import History, StepRecord
from .results import RunRecord

RUN_SCHEMA_VERSION = 1
EVENTS_FILE = "events.jsonl"
METADATA_FILE = "run-metadata.json"


class RunLogger:
    """Append-only JSONL writer for run events."""

    def __init__(self, log_path: Path) -> None:
        self._path = Path(log_path)
        self._fh = open(self._path, "a")
        self._run: Optional[Dict[str, Any]] = None

    def start_run(self, problem: str, algo: str, seed: int, config: Dict[str, Any]) -> None:
        self._run = {"problem": problem, "algo": algo, "seed": seed}
        self._emit_raw({
            "event_type": "run_start",
            "timestamp": time.time(),
            "schema_version": RUN_SCHEMA_VERSION,
            **self._run,
            "config": config,
        })

    def step(self, record: Union[StepRecord, Dict[str, Any]],
             diagnostics: Optional[Dict[str, Any]] = None) -> None:
        """Usable directly as the engine's ``on_step`` callback."""
        data = record.to_dict() if isinstance(record, StepRecord) else dict(record)
        event = {"event_type": "step", **(self._run or {}), **data}
        if diagnostics:
            event["diagnostics"] = diagnostics
        self.emit(event)

    def end_run(self, history: Union[History, RunRecord]) -> None:
        if isinstance(history, History):
            spent, reason = history.spent, history.abort_reason
        else:
            spent, reason = (history.cum_cost[-1] if len(history) else 0.0), None
        self.emit({
            "event_type": "run_end",
            **(self._run or {}),
            "status": "aborted" if history.aborted else "completed",
            "abort_reason": reason,
            "steps": len(history),
            "spent": spent,
            "wall_time": history.wall_time,
        })
        self._run = None

    def emit(self, event: Dict[str, Any]) -> None:
        event.setdefault("timestamp", time.time())
        self._emit_raw(event)

    def _emit_raw(self, event: Dict[str, Any]) -> None:
        self._fh.write(json.dumps(event, default=str) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RunLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def path(self) -> Path:
        return self._path


def read_events(path: Path) -> Iterator[Dict[str, Any]]:
    with open(path) as fh:
        for line in fh:
            raw = line.strip()
            if raw:
                yield json.loads(raw)


def write_metadata(out_dir: Path, command: str, seeds: List[int], config: Dict[str, Any],
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(out_dir) / METADATA_FILE
    meta = {
        "command": command,
        "version": __version__,
        "schema_version": RUN_SCHEMA_VERSION,
        "created": time.time(),
        "seeds": list(seeds),
        "config": config,
        **(extra or {}),
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, default=str)
        fh.write("\n")
    return path
