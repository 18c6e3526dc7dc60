"""Versioned table layer: an append-only log of file-level actions on the
object store, folded into snapshots, committed with optimistic concurrency.

Log entries live at ``tables/{table_id}/_log/{version:020}.json`` and are
written with put-if-absent, so the object store's conditional put is the only
concurrency primitive. Data files are always written before the entry that
references them: a crash can leave orphaned data files but never a dangling
log reference.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from typing import Iterable

from .errors import (
    AlreadyInitialized,
    CommitConflictExhausted,
    InvalidAction,
    NoSuchVersion,
    NotFound,
    NotInitialized,
    PreconditionFailed,
)
from .fixedpoint import us_to_date

DEFAULT_COMMITTER = "brc"


@dataclass(frozen=True)
class PartitionKey:
    symbol: str
    date: str  # YYYY-MM-DD, UTC

    def render(self) -> str:
        return f"symbol={self.symbol}/date={self.date}"


@dataclass(frozen=True)
class AddFile:
    path: str
    partition: PartitionKey
    rows: int
    bytes: int
    min_event_time_us: int
    max_event_time_us: int


@dataclass(frozen=True)
class RemoveFile:
    path: str


@dataclass(frozen=True)
class SetSchema:
    schema_id: str
    columns: tuple[tuple[str, str], ...]  # (name, physical_type) pairs


Action = AddFile | RemoveFile | SetSchema


@dataclass
class LogEntry:
    version: int
    parent: int
    committed_at_us: int
    actions: list[Action]
    committer: str


@dataclass
class Snapshot:
    version: int
    live_files: dict[str, AddFile] = field(default_factory=dict)
    schema_id: str = ""

    def apply(self, entry: LogEntry) -> None:
        assert entry.version == self.version + 1, "log entries must fold in order"
        for action in entry.actions:
            if isinstance(action, AddFile):
                assert action.path not in self.live_files, f"duplicate live path {action.path}"
                self.live_files[action.path] = action
            elif isinstance(action, RemoveFile):
                del self.live_files[action.path]
            else:
                self.schema_id = action.schema_id
        self.version = entry.version


# -- JSON codec --------------------------------------------------------------

def _action_to_json(action: Action) -> dict:
    if isinstance(action, AddFile):
        return {
            "add_file": {
                "bytes": action.bytes,
                "max_event_time_us": action.max_event_time_us,
                "min_event_time_us": action.min_event_time_us,
                "partition": {"date": action.partition.date, "symbol": action.partition.symbol},
                "path": action.path,
                "rows": action.rows,
            }
        }
    if isinstance(action, RemoveFile):
        return {"remove_file": {"path": action.path}}
    return {
        "set_schema": {
            "columns": [{"name": n, "physical_type": t} for n, t in action.columns],
            "schema_id": action.schema_id,
        }
    }


def _action_from_json(obj: dict) -> Action:
    if "add_file" in obj:
        a = obj["add_file"]
        return AddFile(
            path=a["path"],
            partition=PartitionKey(a["partition"]["symbol"], a["partition"]["date"]),
            rows=a["rows"],
            bytes=a["bytes"],
            min_event_time_us=a["min_event_time_us"],
            max_event_time_us=a["max_event_time_us"],
        )
    if "remove_file" in obj:
        return RemoveFile(path=obj["remove_file"]["path"])
    s = obj["set_schema"]
    return SetSchema(
        schema_id=s["schema_id"],
        columns=tuple((c["name"], c["physical_type"]) for c in s["columns"]),
    )


def entry_to_bytes(entry: LogEntry) -> bytes:
    return json.dumps(
        {
            "actions": [_action_to_json(a) for a in entry.actions],
            "committed_at_us": entry.committed_at_us,
            "committer": entry.committer,
            "parent": entry.parent,
            "version": entry.version,
        },
        sort_keys=True,
    ).encode()


def _entry_from_bytes(data: bytes) -> LogEntry:
    obj = json.loads(data)
    return LogEntry(
        version=obj["version"],
        parent=obj["parent"],
        committed_at_us=obj["committed_at_us"],
        actions=[_action_from_json(a) for a in obj["actions"]],
        committer=obj["committer"],
    )


class LakeTable:
    """One versioned table on an object store."""

    def __init__(self, store, table_id: str):
        self.store = store
        self.table_id = table_id
        self._cache = Snapshot(version=0)  # fold of entries 1.._cache.version

    # -- layout --------------------------------------------------------------

    @property
    def log_prefix(self) -> str:
        return f"tables/{self.table_id}/_log/"

    def _entry_key(self, version: int) -> str:
        return f"{self.log_prefix}{version:020}.json"

    def data_key(self, partition: PartitionKey, committer: str) -> str:
        return (
            f"tables/{self.table_id}/data/{partition.render()}/"
            f"part-{committer}-{uuid.uuid4().hex}.brcl"
        )

    # -- log access --------------------------------------------------------------

    def current_version(self) -> int:
        """Highest contiguous version in the log (names sort in version order)."""
        metas = self.store.list(self.log_prefix)
        version = 0
        for meta in metas:
            name = meta.key[len(self.log_prefix):]
            if not name.endswith(".json"):
                continue
            v = int(name[:-5])
            if v == version + 1:
                version = v
            else:
                break
        if version == 0:
            raise NotInitialized(f"table {self.table_id!r} has no log")
        return version

    def read_entry(self, version: int) -> LogEntry:
        try:
            return _entry_from_bytes(self.store.get(self._entry_key(version)))
        except NotFound:
            raise NoSuchVersion(version, self._cache.version)

    def read_log(self) -> list[LogEntry]:
        return [self.read_entry(v) for v in range(1, self.current_version() + 1)]

    def _advance_cache(self, to_version: int) -> Snapshot:
        while self._cache.version < to_version:
            self._cache.apply(self.read_entry(self._cache.version + 1))
        return self._cache

    def _discover_current(self) -> int:
        """Advance the cache past every committed entry and return the current
        version. Reads only entries newer than the cache, so repeated calls
        (the commit retry loop) cost O(new entries), not O(log)."""
        while True:
            try:
                entry = self.read_entry(self._cache.version + 1)
            except NoSuchVersion:
                break
            self._cache.apply(entry)
        if self._cache.version == 0:
            raise NotInitialized(f"table {self.table_id!r} has no log")
        return self._cache.version

    # -- operations ---------------------------------------------------------------

    def init(
        self,
        schema_id: str,
        columns: Iterable[tuple[str, str]],
        committer: str = DEFAULT_COMMITTER,
        now_us: int | None = None,
    ) -> LogEntry:
        if self.store.list(self.log_prefix):
            raise AlreadyInitialized(f"table {self.table_id!r} already has a log")
        entry = LogEntry(
            version=1,
            parent=0,
            committed_at_us=time.time_ns() // 1000 if now_us is None else now_us,
            actions=[SetSchema(schema_id=schema_id, columns=tuple(columns))],
            committer=committer,
        )
        try:
            self.store.put(self._entry_key(1), entry_to_bytes(entry), if_none_match=True)
        except PreconditionFailed:
            raise AlreadyInitialized(f"table {self.table_id!r} already has a log")
        return entry

    def _validate(self, snapshot: Snapshot, actions: list[Action]) -> None:
        added: set[str] = set()
        removed: set[str] = set()
        for action in actions:
            if isinstance(action, AddFile):
                if action.rows < 1:
                    raise InvalidAction(f"add_file {action.path}: rows must be >= 1")
                if action.min_event_time_us > action.max_event_time_us:
                    raise InvalidAction(f"add_file {action.path}: min > max event time")
                if action.path in snapshot.live_files or action.path in added:
                    raise InvalidAction(f"add_file {action.path}: path already live")
                added.add(action.path)
            elif isinstance(action, RemoveFile):
                if action.path not in snapshot.live_files or action.path in removed:
                    raise InvalidAction(f"remove_file {action.path}: not live")
                removed.add(action.path)
            else:
                raise InvalidAction("set_schema is only valid at table init")

    def commit(
        self,
        actions: list[Action],
        committer: str = DEFAULT_COMMITTER,
        max_retries: int = 10,
        now_us: int | None = None,
    ) -> LogEntry:
        """Validate against the current snapshot and append the next version.

        On a conditional-put collision the commit re-reads, re-validates
        against the new snapshot (rebase), and retries; disjoint concurrent
        adds always merge, while removing an already-removed file fails.
        """
        if not actions:
            raise InvalidAction("commit requires at least one action")
        for _ in range(max_retries):
            version = self._discover_current()
            self._validate(self._cache, actions)
            entry = LogEntry(
                version=version + 1,
                parent=version,
                committed_at_us=time.time_ns() // 1000 if now_us is None else now_us,
                actions=list(actions),
                committer=committer,
            )
            try:
                self.store.put(self._entry_key(entry.version), entry_to_bytes(entry), if_none_match=True)
                return entry
            except PreconditionFailed:
                continue
        raise CommitConflictExhausted(
            f"gave up after {max_retries} commit collisions on {self.table_id!r}"
        )

    def snapshot_at(self, version: int | None = None) -> Snapshot:
        current = self._discover_current()
        if version is None:
            version = current
        if version < 1 or version > current:
            raise NoSuchVersion(version, current)
        if version >= self._cache.version:
            cached = self._advance_cache(version)
            return Snapshot(cached.version, dict(cached.live_files), cached.schema_id)
        fresh = Snapshot(version=0)  # time travel below the cache: refold
        for v in range(1, version + 1):
            fresh.apply(self.read_entry(v))
        return fresh

    def audit(self) -> dict:
        """Referential integrity report: dangling references are failures,
        orphaned data files are informational."""
        snapshot = self.snapshot_at()
        data_prefix = f"tables/{self.table_id}/data/"
        stored = {m.key for m in self.store.list(data_prefix)}
        live = set(snapshot.live_files)
        return {
            "version": snapshot.version,
            "live_files": len(live),
            "dangling": sorted(live - stored),
            "orphans": sorted(stored - live),
        }


def list_files(
    snapshot: Snapshot,
    time_range: tuple[int, int],
    symbols: Iterable[str],
) -> list[AddFile]:
    """Live files that can hold events for the symbols within [t0, t1).

    A file qualifies when its partition symbol matches, its partition date
    falls inside the range's UTC date span, and its event-time interval
    overlaps the half-open range. Sorted by (partition, path).
    """
    t0, t1 = time_range
    assert t0 < t1, "time range must be non-empty"
    wanted = set(symbols)
    first_date = us_to_date(t0)
    last_date = us_to_date(t1 - 1)
    out = [
        f
        for f in snapshot.live_files.values()
        if f.partition.symbol in wanted
        and first_date <= f.partition.date <= last_date
        and f.max_event_time_us >= t0
        and f.min_event_time_us < t1
    ]
    out.sort(key=lambda f: (f.partition.symbol, f.partition.date, f.path))
    return out
