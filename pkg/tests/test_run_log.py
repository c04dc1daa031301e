import json

import pytest

from mixed_bo.engine import History, StepRecord
from mixed_bo.results import RunRecord
from mixed_bo.run_log import (
    EVENTS_FILE,
    METADATA_FILE,
    RUN_SCHEMA_VERSION,
    RunLogger,
    read_events,
    write_metadata,
)


def step_record(step, cum_cost, output_index=1):
    return StepRecord(step=step, output_index=output_index, x=[0.1, 0.2], y=0.5, cost=1.0,
                      cum_cost=cum_cost, recommendation=[0.3, 0.4], regret=0.01)


class TestRunLogger:
    def test_run_lifecycle(self, tmp_path):
        history = History(budget=10.0)
        with RunLogger(tmp_path / EVENTS_FILE) as log:
            log.start_run("synthetic-0", "mtpes", 3, {"budget": 10.0})
            for k in range(2):
                rec = step_record(k, k + 1.0)
                history.append(rec)
                log.step(rec, {"hyperparams": {"noise_var": 1e-3}})
            history.wall_time = 1.5
            log.end_run(history)

        events = list(read_events(tmp_path / EVENTS_FILE))
        assert [e["event_type"] for e in events] == ["run_start", "step", "step", "run_end"]
        assert events[0]["schema_version"] == RUN_SCHEMA_VERSION
        assert events[0]["config"] == {"budget": 10.0}
        assert all(e["algo"] == "mtpes" and e["seed"] == 3 for e in events)
        assert events[1]["log10_ir"] == pytest.approx(-2.0)
        assert events[1]["diagnostics"]["hyperparams"]["noise_var"] == 1e-3
        assert events[-1]["status"] == "completed"
        assert events[-1]["steps"] == 2
        assert events[-1]["spent"] == 2.0

    def test_end_run_from_aborted_record(self, tmp_path):
        record = RunRecord(algo="mtes", seed=0, problem="p", d=1, steps=[0], output_index=[1], x=[[0.5]],
                           y=[0.0], cost=[10.0], cum_cost=[10.0], log10_ir=[-1.0], wall_time=0.2, aborted=True)
        with RunLogger(tmp_path / EVENTS_FILE) as log:
            log.start_run("p", "mtes", 0, {})
            log.end_run(record)
        end = list(read_events(tmp_path / EVENTS_FILE))[-1]
        assert end["status"] == "aborted"
        assert end["spent"] == 10.0

    def test_appends_across_instances(self, tmp_path):
        path = tmp_path / EVENTS_FILE
        for _ in range(2):
            with RunLogger(path) as log:
                log.emit({"event_type": "note"})
        events = list(read_events(path))
        assert len(events) == 2
        assert all("timestamp" in e for e in events)

    def test_step_accepts_plain_dicts(self, tmp_path):
        with RunLogger(tmp_path / EVENTS_FILE) as log:
            log.step({"step": 4, "output_index": 2})
        (event,) = read_events(tmp_path / EVENTS_FILE)
        assert event["step"] == 4
        assert "diagnostics" not in event


def test_write_metadata(tmp_path):
    path = write_metadata(tmp_path, "bench synthetic", [0, 1, 2], {"budget": 100.0}, {"algorithms": ["pes"]})
    assert path.name == METADATA_FILE
    meta = json.loads(path.read_text())
    assert meta["seeds"] == [0, 1, 2]
    assert meta["config"]["budget"] == 100.0
    assert meta["algorithms"] == ["pes"]
    assert meta["schema_version"] == RUN_SCHEMA_VERSION
