"""DAG workflow scheduling: dependency ordering, retries with exponential
backoff, backfill over historical windows, and replay-based crash recovery.

Every state transition is appended to a durable run log before it takes
effect, so a killed scheduler resumes exactly where the log ends: Succeeded
tasks are never re-run, tasks caught Running are re-queued with their attempt
preserved. Under a simulated clock the whole execution is deterministic —
ready tasks start in task-id order, backoff has no jitter, and actions run
at most ``max_parallel_tasks`` per scheduling instant.
"""

from __future__ import annotations

import json
import os
import secrets
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import (
    ActionNotRegistered,
    ConfigInvalid,
    CorruptRunLog,
    CycleDetected,
    SessionLockHeld,
)
from .fixedpoint import US_PER_DAY

PENDING = "Pending"
QUEUED = "Queued"
RUNNING = "Running"
SUCCEEDED = "Succeeded"
FAILED = "Failed"
RETRYING = "Retrying"

_LEGAL = {
    (PENDING, QUEUED),
    (PENDING, FAILED),  # upstream failure, never ran
    (QUEUED, FAILED),
    (QUEUED, RUNNING),
    (RUNNING, SUCCEEDED),
    (RUNNING, FAILED),
    (RUNNING, RETRYING),
    (RETRYING, QUEUED),
}


# -- schedule ------------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    anchor_us: int
    period_us: int


@dataclass(frozen=True)
class DailyAt:
    hour: int
    minute: int


Schedule = Interval | DailyAt


def next_run_after(schedule: Schedule, t_us: int) -> int:
    """First schedule instant strictly after t_us."""
    if isinstance(schedule, Interval):
        if t_us < schedule.anchor_us:
            return schedule.anchor_us
        periods = (t_us - schedule.anchor_us) // schedule.period_us + 1
        return schedule.anchor_us + periods * schedule.period_us
    offset = (schedule.hour * 3600 + schedule.minute * 60) * 1_000_000
    candidate = (t_us // US_PER_DAY) * US_PER_DAY + offset
    return candidate if candidate > t_us else candidate + US_PER_DAY


def schedule_instants(schedule: Schedule, from_us: int, to_us: int) -> list[int]:
    """All schedule instants within [from_us, to_us)."""
    out = []
    t = next_run_after(schedule, from_us - 1)
    while t < to_us:
        out.append(t)
        t = next_run_after(schedule, t)
    return out


# -- DAG definition ---------------------------------------------------------------

@dataclass
class RetryPolicy:
    max_attempts: int = 1
    base_delay_s: int = 5
    cap_delay_s: int = 300


@dataclass
class TaskSpec:
    task_id: str
    depends_on: list[str]
    action: str
    params: dict[str, Any] = field(default_factory=dict)
    retry: RetryPolicy = field(default_factory=RetryPolicy)


@dataclass
class DagSpec:
    dag_id: str
    schedule: Schedule
    tasks: list[TaskSpec]
    max_parallel_tasks: int = 1

    def task_map(self) -> dict[str, TaskSpec]:
        return {t.task_id: t for t in self.tasks}

    def validate(self) -> None:
        if not self.dag_id:
            raise ConfigInvalid("dag_id", "must be non-empty")
        if self.max_parallel_tasks < 1:
            raise ConfigInvalid("max_parallel_tasks", "must be >= 1")
        seen = set()
        for task in self.tasks:
            if task.task_id in seen:
                raise ConfigInvalid("tasks", f"duplicate task id {task.task_id!r}")
            seen.add(task.task_id)
            if task.retry.max_attempts < 1:
                raise ConfigInvalid("retry.max_attempts", "must be >= 1")
        for task in self.tasks:
            for dep in task.depends_on:
                if dep not in seen:
                    raise ConfigInvalid("depends_on", f"{task.task_id!r} depends on unknown {dep!r}")
        topo_order(self)  # raises CycleDetected

    @classmethod
    def from_dict(cls, obj: dict) -> "DagSpec":
        sched = obj.get("schedule") or {}
        if "interval" in sched:
            schedule: Schedule = Interval(
                anchor_us=int(sched["interval"].get("anchor_us", 0)),
                period_us=int(sched["interval"]["period_us"]),
            )
        elif "daily_at" in sched:
            d = sched["daily_at"]
            hour, minute = int(d.get("hour", 0)), int(d.get("minute", 0))
            if not (0 <= hour < 24 and 0 <= minute < 60):
                raise ConfigInvalid("daily_at", f"bad time {hour:02}:{minute:02}")
            schedule = DailyAt(hour=hour, minute=minute)
        else:
            raise ConfigInvalid("schedule", "must define interval or daily_at")
        if isinstance(schedule, Interval) and schedule.period_us <= 0:
            raise ConfigInvalid("interval.period_us", "must be > 0")
        tasks = [
            TaskSpec(
                task_id=t["task_id"],
                depends_on=list(t.get("depends_on", [])),
                action=t["action"],
                params=dict(t.get("params", {})),
                retry=RetryPolicy(
                    max_attempts=int(t.get("retry", {}).get("max_attempts", 1)),
                    base_delay_s=int(t.get("retry", {}).get("base_delay_s", 5)),
                    cap_delay_s=int(t.get("retry", {}).get("cap_delay_s", 300)),
                ),
            )
            for t in obj.get("tasks", [])
        ]
        dag = cls(
            dag_id=obj.get("dag_id", ""),
            schedule=schedule,
            tasks=tasks,
            max_parallel_tasks=int(obj.get("max_parallel_tasks", 1)),
        )
        dag.validate()
        return dag

    @classmethod
    def from_file(cls, path: str | Path) -> "DagSpec":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def load_dags(dags_dir: str | Path) -> dict[str, DagSpec]:
    dags = {}
    for path in sorted(Path(dags_dir).glob("*.json")):
        dag = DagSpec.from_file(path)
        dags[dag.dag_id] = dag
    return dags


def topo_order(dag: DagSpec) -> list[str]:
    """Dependency-respecting order, ties broken by ascending task_id."""
    import heapq

    tasks = dag.task_map()
    indegree = {tid: len(t.depends_on) for tid, t in tasks.items()}
    dependents: dict[str, list[str]] = {tid: [] for tid in tasks}
    for tid, task in tasks.items():
        for dep in task.depends_on:
            dependents[dep].append(tid)
    ready = [tid for tid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        tid = heapq.heappop(ready)
        order.append(tid)
        for nxt in dependents[tid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(tasks):
        remaining = {tid for tid in tasks if tid not in set(order)}
        cycle = _find_cycle(tasks, remaining)
        raise CycleDetected(cycle)
    return order


def _find_cycle(tasks: dict[str, TaskSpec], remaining: set[str]) -> list[str]:
    start = sorted(remaining)[0]
    seen: dict[str, int] = {}
    path = [start]
    while path[-1] not in seen:
        seen[path[-1]] = len(path) - 1
        node = path[-1]
        nxt = sorted(d for d in tasks[node].depends_on if d in remaining)[0]
        path.append(nxt)
    loop_start = seen[path[-1]]
    return path[loop_start:]


def backoff_delay(retry: RetryPolicy, attempt: int) -> int:
    """Seconds to wait after a failure of the given attempt (1-based)."""
    return min(retry.base_delay_s * 2 ** (attempt - 1), retry.cap_delay_s)


# -- clock ----------------------------------------------------------------------------

class WallClock:
    def now_us(self) -> int:
        return time.time_ns() // 1000

    def sleep_until(self, t_us: int) -> None:
        delta = t_us - self.now_us()
        if delta > 0:
            time.sleep(delta / 1_000_000)


class SimClock:
    """Manual clock: sleeping jumps time forward instantly."""

    def __init__(self, start_us: int = 0):
        self._now = start_us

    def now_us(self) -> int:
        return self._now

    def sleep_until(self, t_us: int) -> None:
        if t_us > self._now:
            self._now = t_us


# -- durable run log ---------------------------------------------------------------------

@dataclass
class Transition:
    at_us: int
    task_id: str
    attempt: int
    state: str
    extra: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {"at_us": self.at_us, "attempt": self.attempt,
               "state": self.state, "task_id": self.task_id}
        obj.update(self.extra)
        return json.dumps(obj, sort_keys=True)


class RunLog:
    """Append-only JSONL transition log for one (dag, logical_time) run."""

    def __init__(self, path: Path):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, transition: Transition) -> None:
        with open(self.path, "ab") as f:
            f.write(transition.to_json().encode() + b"\n")
            f.flush()
            os.fsync(f.fileno())

    def replay(self) -> list[Transition]:
        if not self.path.exists():
            return []
        out = []
        raw = self.path.read_bytes().split(b"\n")
        if raw and raw[-1] == b"":
            raw.pop()
        elif raw:
            raw.pop()  # torn trailing line from a crash: ignore
        for line_no, line in enumerate(raw, start=1):
            try:
                obj = json.loads(line)
                out.append(
                    Transition(
                        at_us=obj["at_us"],
                        task_id=obj["task_id"],
                        attempt=obj["attempt"],
                        state=obj["state"],
                        extra={k: v for k, v in obj.items()
                               if k not in ("at_us", "task_id", "attempt", "state")},
                    )
                )
            except (ValueError, KeyError) as exc:
                raise CorruptRunLog(line_no, f"line {line_no}: {exc}")
        return out


def recover(transitions: list[Transition]) -> dict[str, tuple[str, int]]:
    """Fold a transition log into per-task (state, attempt), validating
    legality, then convert interrupted work back to Queued: a task caught
    Running re-queues with the same attempt, a task caught Retrying re-queues
    with the next attempt (its backoff deadline died with the process)."""
    states: dict[str, tuple[str, int]] = {}
    for i, tr in enumerate(transitions, start=1):
        prev = states.get(tr.task_id, (PENDING, 1))[0]
        if (prev, tr.state) not in _LEGAL:
            raise CorruptRunLog(i, f"illegal transition {prev} -> {tr.state} for {tr.task_id!r}")
        states[tr.task_id] = (tr.state, tr.attempt)
    resumed = {}
    for task_id, (state, attempt) in states.items():
        if state == RUNNING:
            resumed[task_id] = (QUEUED, attempt)
        elif state == RETRYING:
            resumed[task_id] = (QUEUED, attempt + 1)
        else:
            resumed[task_id] = (state, attempt)
    return resumed


# -- execution ------------------------------------------------------------------------------

@dataclass
class ActionContext:
    """Everything a task action gets to see."""

    logical_time_us: int
    params: dict[str, Any]
    clock: Any
    env: dict[str, Any] = field(default_factory=dict)


ActionFn = Callable[[ActionContext], Any]


@dataclass
class RunResult:
    dag_id: str
    logical_time_us: int
    states: dict[str, str]
    attempts: dict[str, int]
    succeeded: bool


def run_log_path(runs_root: Path, dag_id: str, logical_time_us: int) -> Path:
    return Path(runs_root) / dag_id / str(logical_time_us) / "events.jsonl"


def execute_run(
    dag: DagSpec,
    logical_time_us: int,
    registry: dict[str, ActionFn],
    clock,
    runs_root: Path,
    env: dict[str, Any] | None = None,
) -> RunResult:
    """Execute (or resume) one run of a DAG at a logical time."""
    dag.validate()
    tasks = dag.task_map()
    for task in dag.tasks:
        if task.action not in registry:
            raise ActionNotRegistered(task.task_id, task.action)

    order = topo_order(dag)
    log = RunLog(run_log_path(runs_root, dag.dag_id, logical_time_us))
    states = {tid: PENDING for tid in order}
    attempts = {tid: 1 for tid in order}
    for tid, (state, attempt) in recover(log.replay()).items():
        states[tid] = state
        attempts[tid] = attempt
    wake: dict[str, int] = {}

    def transition(tid: str, state: str, **extra) -> None:
        log.append(Transition(clock.now_us(), tid, attempts[tid], state, extra))
        states[tid] = state

    def deps_of(tid: str) -> list[str]:
        return tasks[tid].depends_on

    while True:
        for tid in order:  # propagate upstream failure without running
            if states[tid] in (PENDING, QUEUED) and any(states[d] == FAILED for d in deps_of(tid)):
                transition(tid, FAILED, cause="upstream")
        for tid in order:
            if states[tid] == PENDING and all(states[d] == SUCCEEDED for d in deps_of(tid)):
                transition(tid, QUEUED)

        runnable = [tid for tid in order
                    if states[tid] == QUEUED and all(states[d] == SUCCEEDED for d in deps_of(tid))]
        batch = sorted(runnable)[: dag.max_parallel_tasks]
        if batch:
            for tid in batch:
                transition(tid, RUNNING)
            for tid in batch:
                task = tasks[tid]
                try:
                    registry[task.action](
                        ActionContext(logical_time_us, task.params, clock, env or {})
                    )
                except Exception as exc:  # noqa: BLE001 - task failure is data here
                    attempt = attempts[tid]
                    if attempt < task.retry.max_attempts:
                        delay_s = backoff_delay(task.retry, attempt)
                        transition(tid, RETRYING, delay_s=delay_s, error=str(exc))
                        wake[tid] = clock.now_us() + delay_s * 1_000_000
                    else:
                        transition(tid, FAILED, error=str(exc))
                else:
                    transition(tid, SUCCEEDED)
            continue

        retrying = [tid for tid in order if states[tid] == RETRYING]
        if retrying:
            clock.sleep_until(min(wake[tid] for tid in retrying))
            now = clock.now_us()
            for tid in sorted(retrying):
                if wake[tid] <= now:
                    attempts[tid] += 1
                    transition(tid, QUEUED)
            continue

        break  # every task terminal

    return RunResult(
        dag_id=dag.dag_id,
        logical_time_us=logical_time_us,
        states=dict(states),
        attempts=dict(attempts),
        succeeded=all(s == SUCCEEDED for s in states.values()),
    )


def backfill(
    dag: DagSpec,
    from_us: int,
    to_us: int,
    registry: dict[str, ActionFn],
    clock,
    runs_root: Path,
    env: dict[str, Any] | None = None,
) -> list[RunResult]:
    """One run per schedule instant in [from_us, to_us), ascending, sequential.

    Runs whose log already shows every task Succeeded are resumed as no-ops,
    so an interrupted backfill picks up where it stopped.
    """
    assert from_us < to_us, "backfill window must be non-empty"
    return [
        execute_run(dag, t, registry, clock, runs_root, env)
        for t in schedule_instants(dag.schedule, from_us, to_us)
    ]


# -- scheduler process ---------------------------------------------------------------------------

class Scheduler:
    """Owns a runs directory (single process via lock file) and executes DAGs."""

    def __init__(self, runs_root: str | Path, registry: dict[str, ActionFn],
                 clock=None, env: dict[str, Any] | None = None):
        self.runs_root = Path(runs_root)
        self.registry = registry
        self.clock = clock or WallClock()
        self.env = env or {}
        self.runs_root.mkdir(parents=True, exist_ok=True)
        self._lock = self.runs_root / "lock"
        self._token = secrets.token_hex(8)
        self._acquire()

    def _acquire(self) -> None:
        body = json.dumps({"pid": os.getpid(), "token": self._token}).encode()
        for _ in range(4):
            try:
                fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                try:
                    holder = json.loads(self._lock.read_text())
                except (OSError, ValueError):
                    holder = None
                alive = False
                if holder:
                    try:
                        os.kill(holder["pid"], 0)
                        alive = True
                    except ProcessLookupError:
                        alive = False
                    except PermissionError:
                        alive = True
                if alive:
                    raise SessionLockHeld(f"scheduler already running (pid {holder['pid']})")
                try:
                    os.unlink(self._lock)
                except FileNotFoundError:
                    pass
                continue
            with os.fdopen(fd, "wb") as f:
                f.write(body)
            return
        raise SessionLockHeld("could not acquire scheduler lock")

    def close(self) -> None:
        try:
            holder = json.loads(self._lock.read_text())
            if holder.get("token") == self._token:
                os.unlink(self._lock)
        except (OSError, ValueError):
            pass

    def __enter__(self) -> "Scheduler":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def run_once(self, dag: DagSpec, logical_time_us: int) -> RunResult:
        return execute_run(dag, logical_time_us, self.registry, self.clock, self.runs_root, self.env)

    def backfill(self, dag: DagSpec, from_us: int, to_us: int) -> list[RunResult]:
        return backfill(dag, from_us, to_us, self.registry, self.clock, self.runs_root, self.env)

    def run_forever(self, dags: dict[str, DagSpec], until_us: int | None = None) -> list[RunResult]:
        """Execute each DAG at its schedule instants until until_us (or forever)."""
        results = []
        pending = {dag_id: next_run_after(dag.schedule, self.clock.now_us())
                   for dag_id, dag in dags.items()}
        while pending:
            dag_id = min(pending, key=lambda d: (pending[d], d))
            t = pending[dag_id]
            if until_us is not None and t >= until_us:
                pending.pop(dag_id)
                continue
            self.clock.sleep_until(t)
            results.append(self.run_once(dags[dag_id], t))
            pending[dag_id] = next_run_after(dags[dag_id].schedule, t)
        return results
