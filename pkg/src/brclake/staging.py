"""Durable append-only staging buffer between connectors and ETL.

On-disk layout, one directory per connector under the staging root:

    {connector_id}/seg-{start_offset:020}.jsonl   record lines, dense offsets
    {connector_id}/checkpoint.json                exporter's committed offset
    {connector_id}/connector_state.json           connector resume state
    {connector_id}/lock                           single-writer session lock

Record lines are JSON objects: MarketEvent fields plus "offset". Offsets are
dense per connector, starting at 0; a segment holds at most
``max_segment_records`` records and is immutable once full. Appends are a
single buffered write + fsync, so a crash between operations never tears a
batch; a torn trailing line from a crash inside a write is truncated the next
time a writer session opens the connector.
"""

from __future__ import annotations

import errno
import json
import os
import secrets
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    CheckpointRegression,
    OffsetOutOfRange,
    SessionLockHeld,
    StagingUnavailable,
    StorageFull,
)
from .events import MarketEvent

DEFAULT_MAX_SEGMENT_RECORDS = 10_000


@dataclass(frozen=True)
class StagedRecord:
    offset: int
    event: MarketEvent


def _fsync_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp-{secrets.token_hex(8)}")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class StagingStore:
    """Segmented JSONL staging under a local root directory."""

    def __init__(self, root: str | Path, max_segment_records: int = DEFAULT_MAX_SEGMENT_RECORDS):
        self.root = Path(root)
        self.max_segment_records = max_segment_records
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StagingUnavailable(f"cannot create staging root {self.root}: {exc}")

    # -- layout helpers --------------------------------------------------

    def _dir(self, connector_id: str) -> Path:
        return self.root / connector_id

    def _segment_path(self, connector_id: str, start_offset: int) -> Path:
        return self._dir(connector_id) / f"seg-{start_offset:020}.jsonl"

    def _segments(self, connector_id: str) -> list[tuple[int, Path]]:
        d = self._dir(connector_id)
        if not d.is_dir():
            return []
        segs = []
        for name in sorted(os.listdir(d)):
            if name.startswith("seg-") and name.endswith(".jsonl"):
                segs.append((int(name[4:-6]), d / name))
        return segs

    @staticmethod
    def _read_lines(path: Path) -> list[bytes]:
        """Complete (newline-terminated) lines of a segment file."""
        data = path.read_bytes()
        if not data:
            return []
        lines = data.split(b"\n")
        lines.pop()  # empty tail after the final newline, or a torn line from a crash
        return lines

    def tail_offset(self, connector_id: str) -> int:
        """Offset one past the last appended record (0 for a fresh connector)."""
        segs = self._segments(connector_id)
        if not segs:
            return 0
        start, path = segs[-1]
        return start + len(self._read_lines(path))

    # -- writer session ----------------------------------------------------

    def open_session(self, connector_id: str) -> "StagingSession":
        """Acquire the single-writer lock for a connector.

        A lock file left behind by a dead process is stolen; a lock held by a
        live process raises SessionLockHeld.
        """
        d = self._dir(connector_id)
        d.mkdir(parents=True, exist_ok=True)
        lock = d / "lock"
        token = secrets.token_hex(8)
        body = json.dumps({"pid": os.getpid(), "token": token}).encode()
        for _ in range(4):
            try:
                fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                try:
                    holder = json.loads(lock.read_text())
                except (OSError, ValueError):
                    holder = None
                if holder and _pid_alive(holder["pid"]):
                    raise SessionLockHeld(f"connector {connector_id!r} locked by pid {holder['pid']}")
                try:
                    os.unlink(lock)  # stale: previous holder is gone
                except FileNotFoundError:
                    pass
                continue
            with os.fdopen(fd, "wb") as f:
                f.write(body)
            self._repair_tail(connector_id)
            return StagingSession(self, connector_id, token)
        raise SessionLockHeld(f"could not acquire session lock for {connector_id!r}")

    def _repair_tail(self, connector_id: str) -> None:
        """Truncate a torn trailing line left by a crash mid-write."""
        segs = self._segments(connector_id)
        if not segs:
            return
        _, path = segs[-1]
        data = path.read_bytes()
        cut = data.rfind(b"\n") + 1
        if cut != len(data):
            with open(path, "r+b") as f:
                f.truncate(cut)
                f.flush()
                os.fsync(f.fileno())

    def _release(self, connector_id: str, token: str) -> None:
        lock = self._dir(connector_id) / "lock"
        try:
            holder = json.loads(lock.read_text())
        except (OSError, ValueError):
            return
        if holder.get("token") == token:
            try:
                os.unlink(lock)
            except FileNotFoundError:
                pass

    def _active_segment(self, connector_id: str) -> tuple[int, int]:
        """(start_offset, record_count) of the newest segment."""
        segs = self._segments(connector_id)
        if not segs:
            return 0, 0
        start, path = segs[-1]
        return start, len(self._read_lines(path))

    def _append(
        self, connector_id: str, events: list[MarketEvent], active: tuple[int, int]
    ) -> tuple[int, int, tuple[int, int]]:
        active_start, active_count = active
        first = active_start + active_count
        offset = first
        remaining = events
        try:
            while remaining:
                room = self.max_segment_records - active_count
                if room == 0:
                    active_start += active_count
                    active_count = 0
                    room = self.max_segment_records
                chunk, remaining = remaining[:room], remaining[room:]
                blob = b"".join(
                    json.dumps({**e.to_json_dict(), "offset": offset + i}, sort_keys=True).encode() + b"\n"
                    for i, e in enumerate(chunk)
                )
                with open(self._segment_path(connector_id, active_start), "ab") as f:
                    f.write(blob)
                    f.flush()
                    os.fsync(f.fileno())
                offset += len(chunk)
                active_count += len(chunk)
        except OSError as exc:
            if exc.errno == errno.ENOSPC:
                raise StorageFull(str(exc))
            raise StagingUnavailable(str(exc))
        return first, offset - 1, (active_start, active_count)

    # -- readers -------------------------------------------------------------

    def read_from(self, connector_id: str, offset: int, max_records: int) -> list[StagedRecord]:
        tail = self.tail_offset(connector_id)
        if offset > tail:
            raise OffsetOutOfRange(offset, tail - 1)
        out: list[StagedRecord] = []
        if offset == tail or max_records <= 0:
            return out
        segs = self._segments(connector_id)
        starts = [s for s, _ in segs]
        idx = max(0, bisect_right(starts, offset) - 1)
        for start, path in segs[idx:]:
            if len(out) >= max_records:
                break
            lines = self._read_lines(path)
            lo = max(0, offset - start)
            for i in range(lo, len(lines)):
                obj = json.loads(lines[i])
                rec_offset = obj.pop("offset")
                out.append(StagedRecord(rec_offset, MarketEvent.from_json_dict(obj)))
                if len(out) >= max_records:
                    break
        return out

    # -- export checkpoint ----------------------------------------------------

    def _checkpoint_path(self, connector_id: str) -> Path:
        return self._dir(connector_id) / "checkpoint.json"

    def committed_offset(self, connector_id: str) -> int:
        path = self._checkpoint_path(connector_id)
        if not path.exists():
            return 0
        return json.loads(path.read_text())["committed_offset"]

    def drain_batch(self, connector_id: str, max_records: int) -> tuple[list[StagedRecord], int]:
        """Records from the committed offset onward, plus the checkpoint to
        commit after downstream success. Does not advance the stored checkpoint."""
        committed = self.committed_offset(connector_id)
        records = self.read_from(connector_id, committed, max_records)
        return records, committed + len(records)

    def commit_checkpoint(self, connector_id: str, next_checkpoint: int) -> None:
        stored = self.committed_offset(connector_id)
        if next_checkpoint < stored:
            raise CheckpointRegression(stored, next_checkpoint)
        tail = self.tail_offset(connector_id)
        if next_checkpoint > tail:
            raise OffsetOutOfRange(next_checkpoint, tail - 1)
        d = self._dir(connector_id)
        d.mkdir(parents=True, exist_ok=True)
        _fsync_write(
            self._checkpoint_path(connector_id),
            json.dumps({"committed_offset": next_checkpoint}, sort_keys=True).encode(),
        )

    # -- connector resume state ------------------------------------------------

    def save_connector_state(self, connector_id: str, state: dict) -> None:
        d = self._dir(connector_id)
        d.mkdir(parents=True, exist_ok=True)
        _fsync_write(d / "connector_state.json", json.dumps(state, sort_keys=True).encode())

    def load_connector_state(self, connector_id: str) -> dict | None:
        path = self._dir(connector_id) / "connector_state.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())

    # -- maintenance -------------------------------------------------------------

    def connectors(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def prune(self, connector_id: str) -> int:
        """Remove sealed segments fully below the committed checkpoint.

        The newest segment is always kept so the tail offset stays derivable.
        Returns the number of segments removed.
        """
        committed = self.committed_offset(connector_id)
        segs = self._segments(connector_id)
        removed = 0
        for start, path in segs[:-1]:
            if start + len(self._read_lines(path)) <= committed:
                os.unlink(path)
                removed += 1
        return removed


class StagingSession:
    """Holder of a connector's single-writer lock; releases on close/exit."""

    def __init__(self, store: StagingStore, connector_id: str, token: str):
        self.store = store
        self.connector_id = connector_id
        self._token = token
        self._open = True
        self._active = store._active_segment(connector_id)

    def append_batch(self, events: list[MarketEvent]) -> tuple[int, int]:
        """Append events with consecutive offsets; returns (first, last)."""
        assert self._open, "session closed"
        if not events:
            tail = self._active[0] + self._active[1]
            return tail, tail - 1
        first, last, self._active = self.store._append(self.connector_id, events, self._active)
        return first, last

    def save_state(self, state: dict) -> None:
        self.store.save_connector_state(self.connector_id, state)

    def load_state(self) -> dict | None:
        return self.store.load_connector_state(self.connector_id)

    def close(self) -> None:
        if self._open:
            self.store._release(self.connector_id, self._token)
            self._open = False

    def __enter__(self) -> "StagingSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
