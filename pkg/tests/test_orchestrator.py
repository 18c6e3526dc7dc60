import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brclake.errors import (
    ActionNotRegistered,
    ConfigInvalid,
    CorruptRunLog,
    CycleDetected,
    SessionLockHeld,
)
from brclake.fixedpoint import US_PER_DAY, iso_to_us
from brclake.orchestrator import (
    DagSpec,
    DailyAt,
    Interval,
    RetryPolicy,
    RunLog,
    Scheduler,
    SimClock,
    TaskSpec,
    Transition,
    backfill,
    backoff_delay,
    execute_run,
    load_dags,
    next_run_after,
    recover,
    run_log_path,
    schedule_instants,
    topo_order,
)

MIN = 60_000_000
EVERY_MINUTE = Interval(anchor_us=0, period_us=MIN)


def _dag(tasks, parallel=1, dag_id="d"):
    return DagSpec(dag_id, EVERY_MINUTE, tasks, parallel)


def _read_log(runs_root, dag_id, t):
    return [json.loads(line) for line in
            run_log_path(Path(runs_root), dag_id, t).read_text().splitlines()]


# -- schedule arithmetic -------------------------------------------------------

def test_interval_next_after():
    assert next_run_after(EVERY_MINUTE, 130_000_000) == 180_000_000
    assert next_run_after(EVERY_MINUTE, 60_000_000) == 120_000_000
    assert next_run_after(EVERY_MINUTE, -1) == 0


def test_daily_at_strictly_after():
    schedule = DailyAt(0, 5)
    t = iso_to_us("2021-03-04T00:05:00Z")
    assert next_run_after(schedule, t) == iso_to_us("2021-03-05T00:05:00Z")
    assert next_run_after(schedule, t - 1) == t


@given(st.integers(min_value=0, max_value=10**15), st.integers(min_value=1, max_value=10**9),
       st.integers(min_value=-10**15, max_value=10**15))
@settings(max_examples=100, deadline=None)
def test_next_after_is_aligned_and_strict(anchor, period, t):
    schedule = Interval(anchor, period)
    nxt = next_run_after(schedule, t)
    assert nxt > t
    assert (nxt - anchor) % period == 0
    assert nxt - t <= period or nxt == anchor


# -- topo ----------------------------------------------------------------------------

def test_topo_tie_break_by_id():
    dag = _dag([
        TaskSpec("D", ["B", "C"], "a"), TaskSpec("C", ["A"], "a"),
        TaskSpec("B", ["A"], "a"), TaskSpec("A", [], "a"),
    ])
    assert topo_order(dag) == ["A", "B", "C", "D"]


def test_topo_single_task():
    assert topo_order(_dag([TaskSpec("only", [], "a")])) == ["only"]


def test_cycle_detected_with_listing():
    dag = DagSpec("d", EVERY_MINUTE, [TaskSpec("A", ["B"], "a"), TaskSpec("B", ["A"], "a")])
    with pytest.raises(CycleDetected) as err:
        topo_order(dag)
    assert set(err.value.cycle) >= {"A", "B"}


def test_dependency_violations_respected_in_log(tmp_path):
    ran = []
    dag = _dag([
        TaskSpec("c", ["a", "b"], "track"), TaskSpec("a", [], "track"),
        TaskSpec("b", ["a"], "track"),
    ], parallel=2)
    registry = {"track": lambda ctx: ran.append(1)}
    execute_run(dag, 0, registry, SimClock(0), tmp_path)
    log = _read_log(tmp_path, "d", 0)
    succeeded_at = {}
    for i, tr in enumerate(log):
        if tr["state"] == "Succeeded":
            succeeded_at[tr["task_id"]] = i
        if tr["state"] == "Running":
            for dep in {"a": [], "b": ["a"], "c": ["a", "b"]}[tr["task_id"]]:
                assert dep in succeeded_at and succeeded_at[dep] < i


# -- backoff ---------------------------------------------------------------------------

def test_backoff_formula():
    retry = RetryPolicy(max_attempts=10, base_delay_s=5, cap_delay_s=300)
    assert backoff_delay(retry, 1) == 5
    assert backoff_delay(retry, 3) == 20
    assert backoff_delay(retry, 10) == 300


# -- execute_run -----------------------------------------------------------------------------

def test_all_succeed_single_attempts(tmp_path):
    dag = _dag([TaskSpec("a", [], "ok"), TaskSpec("b", ["a"], "ok")])
    result = execute_run(dag, 60, {"ok": lambda ctx: None}, SimClock(0), tmp_path)
    assert result.succeeded
    assert result.attempts == {"a": 1, "b": 1}


def test_flaky_task_retries_with_backoff_instants(tmp_path):
    calls = {"n": 0}

    def flaky(ctx):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise RuntimeError("scripted")

    dag = _dag([TaskSpec("b", [], "flaky", retry=RetryPolicy(3, 5, 300))])
    clock = SimClock(0)
    result = execute_run(dag, 0, {"flaky": flaky}, clock, tmp_path)
    assert result.succeeded and result.attempts["b"] == 3
    queued = [tr["at_us"] for tr in _read_log(tmp_path, "d", 0) if tr["state"] == "Queued"]
    assert queued == [0, 5_000_000, 15_000_000]  # +5 s, then +10 s


def test_exhausted_attempts_fail_and_propagate(tmp_path):
    def bad(ctx):
        raise RuntimeError("always")

    dag = _dag([
        TaskSpec("a", [], "bad", retry=RetryPolicy(2, 5, 300)),
        TaskSpec("b", ["a"], "ok"), TaskSpec("c", ["b"], "ok"),
    ])
    result = execute_run(dag, 0, {"bad": bad, "ok": lambda ctx: None}, SimClock(0), tmp_path)
    assert not result.succeeded
    assert result.states == {"a": "Failed", "b": "Failed", "c": "Failed"}
    log = _read_log(tmp_path, "d", 0)
    assert not any(tr["task_id"] in ("b", "c") and tr["state"] == "Running" for tr in log)
    assert any(tr["task_id"] == "b" and tr.get("cause") == "upstream" for tr in log)


def test_action_not_registered(tmp_path):
    dag = _dag([TaskSpec("a", [], "ghost")])
    with pytest.raises(ActionNotRegistered):
        execute_run(dag, 0, {}, SimClock(0), tmp_path)


def test_parallelism_bound_in_log(tmp_path):
    dag = _dag([TaskSpec(f"t{i}", [], "ok") for i in range(7)], parallel=3)
    execute_run(dag, 0, {"ok": lambda ctx: None}, SimClock(0), tmp_path)
    running = 0
    peak = 0
    for tr in _read_log(tmp_path, "d", 0):
        if tr["state"] == "Running":
            running += 1
            peak = max(peak, running)
        elif tr["state"] in ("Succeeded", "Failed", "Retrying"):
            running -= 1
    assert peak == 3


def test_determinism_across_repetitions(tmp_path):
    def make_flaky():
        calls = {"n": 0}

        def flaky(ctx):
            calls["n"] += 1
            if calls["n"] % 3 != 0:
                raise RuntimeError(f"scripted {calls['n'] % 3}")

        return flaky

    logs = []
    for rep in range(10):
        root = tmp_path / f"rep{rep}"
        dag = _dag([
            TaskSpec("a", [], "ok"),
            TaskSpec("b", ["a"], "flaky", retry=RetryPolicy(5, 5, 300)),
            TaskSpec("c", ["b"], "ok"),
        ])
        registry = {"ok": lambda ctx: None, "flaky": make_flaky()}
        execute_run(dag, 0, registry, SimClock(777), root)
        logs.append(run_log_path(root, "d", 0).read_bytes())
    assert all(log == logs[0] for log in logs)


# -- recovery ----------------------------------------------------------------------------------

def test_recover_running_becomes_queued_same_attempt():
    transitions = [
        Transition(0, "a", 1, "Queued"), Transition(0, "a", 1, "Running"),
        Transition(1, "a", 1, "Succeeded"),
        Transition(1, "b", 2, "Queued"), Transition(1, "b", 2, "Running"),
    ]
    state = recover(transitions)
    assert state == {"a": ("Succeeded", 1), "b": ("Queued", 2)}


def test_recover_rejects_illegal_transition():
    with pytest.raises(CorruptRunLog):
        recover([Transition(0, "a", 1, "Running")])  # skipped Queued


def test_recover_all_terminal_no_work():
    state = recover([
        Transition(0, "a", 1, "Queued"), Transition(0, "a", 1, "Running"),
        Transition(0, "a", 1, "Failed"),
    ])
    assert state == {"a": ("Failed", 1)}


def test_resume_never_reruns_succeeded(tmp_path):
    ran = []

    def once(ctx):
        ran.append(ctx.params["name"])

    tasks = [TaskSpec("a", [], "once", params={"name": "a"}),
             TaskSpec("b", ["a"], "once", params={"name": "b"})]
    dag = _dag(tasks)
    execute_run(dag, 0, {"once": once}, SimClock(0), tmp_path)
    assert ran == ["a", "b"]
    result = execute_run(dag, 0, {"once": once}, SimClock(0), tmp_path)
    assert result.succeeded and ran == ["a", "b"]  # resumed as a no-op


def test_torn_trailing_log_line_ignored(tmp_path):
    log = RunLog(run_log_path(tmp_path, "d", 0))
    log.append(Transition(0, "a", 1, "Queued"))
    with open(log.path, "ab") as f:
        f.write(b'{"at_us": 1, "task_id": "a"')  # crash mid-append
    assert [t.state for t in log.replay()] == ["Queued"]


# -- backfill ------------------------------------------------------------------------------------

def test_backfill_counts():
    daily = Interval(0, US_PER_DAY)
    assert len(schedule_instants(daily, 0, 3 * US_PER_DAY)) == 3
    assert schedule_instants(daily, 5, 5) == []
    # unaligned window starts at the first instant >= from
    assert schedule_instants(daily, 1, 2 * US_PER_DAY + 1)[0] == US_PER_DAY


def test_backfill_executes_in_order_and_skips_done(tmp_path):
    executed = []

    def act(ctx):
        executed.append(ctx.logical_time_us)

    dag = DagSpec("bf", Interval(0, US_PER_DAY), [TaskSpec("a", [], "act")])
    registry = {"act": act}
    results = backfill(dag, 0, 3 * US_PER_DAY, registry, SimClock(0), tmp_path)
    assert [r.logical_time_us for r in results] == executed == [0, US_PER_DAY, 2 * US_PER_DAY]
    # crash mid-backfill simulation: re-running the window re-executes nothing
    executed.clear()
    backfill(dag, 0, 3 * US_PER_DAY, registry, SimClock(0), tmp_path)
    assert executed == []


def test_backfill_after_partial_window(tmp_path):
    """Crash after run 2 of 3: a fresh backfill executes only run 3."""
    executed = []

    def act(ctx):
        executed.append(ctx.logical_time_us)

    dag = DagSpec("bf", Interval(0, US_PER_DAY), [TaskSpec("a", [], "act")])
    registry = {"act": act}
    backfill(dag, 0, 2 * US_PER_DAY, registry, SimClock(0), tmp_path)  # runs 1 and 2
    assert executed == [0, US_PER_DAY]
    executed.clear()
    results = backfill(dag, 0, 3 * US_PER_DAY, registry, SimClock(0), tmp_path)
    assert executed == [2 * US_PER_DAY]
    assert all(r.succeeded for r in results)


# -- dag loading and scheduler lock ------------------------------------------------------------------

def test_dag_json_loading(tmp_path):
    (tmp_path / "pipeline.json").write_text(json.dumps({
        "dag_id": "pipeline",
        "schedule": {"interval": {"anchor_us": 0, "period_us": 300_000_000}},
        "max_parallel_tasks": 2,
        "tasks": [
            {"task_id": "ingest", "action": "ingest.run", "params": {"config_path": "x.json"}},
            {"task_id": "export", "depends_on": ["ingest"], "action": "etl.export",
             "params": {"connector_id": "c", "table_id": "t"},
             "retry": {"max_attempts": 3, "base_delay_s": 5, "cap_delay_s": 300}},
        ],
    }))
    dags = load_dags(tmp_path)
    assert set(dags) == {"pipeline"}
    assert topo_order(dags["pipeline"]) == ["ingest", "export"]
    assert dags["pipeline"].tasks[1].retry.max_attempts == 3


def test_dag_validation_errors(tmp_path):
    with pytest.raises(ConfigInvalid):
        DagSpec.from_dict({"dag_id": "x", "schedule": {}, "tasks": []})
    with pytest.raises(ConfigInvalid):
        DagSpec.from_dict({
            "dag_id": "x", "schedule": {"interval": {"period_us": 1}},
            "tasks": [{"task_id": "a", "action": "n", "depends_on": ["nope"]}],
        })


def test_scheduler_lock_exclusive(tmp_path):
    s1 = Scheduler(tmp_path, {})
    try:
        with pytest.raises(SessionLockHeld):
            Scheduler(tmp_path, {})
    finally:
        s1.close()
    Scheduler(tmp_path, {}).close()


def test_run_forever_until(tmp_path):
    ticks = []
    dag = DagSpec("t", Interval(0, MIN), [TaskSpec("a", [], "tick")])
    with Scheduler(tmp_path, {"tick": lambda ctx: ticks.append(ctx.logical_time_us)},
                   clock=SimClock(0)) as scheduler:
        results = scheduler.run_forever({"t": dag}, until_us=5 * MIN)
    assert ticks == [MIN, 2 * MIN, 3 * MIN, 4 * MIN]
    assert all(r.succeeded for r in results)
