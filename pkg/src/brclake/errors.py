"""Typed error surface shared by every pipeline stage.

Each error carries a stable machine-readable ``kind`` (the class name) so the
CLI can emit one JSON line per failure and tests can match kinds exactly.
"""

from __future__ import annotations

import json
from typing import Any


class BrcError(Exception):
    """Base class for all operational errors."""

    def __init__(self, detail: str = "", **fields: Any):
        super().__init__(detail or self.__class__.__name__)
        self.detail = detail
        self.fields = fields

    @property
    def kind(self) -> str:
        return self.__class__.__name__

    def to_json(self) -> str:
        payload = {"error": self.kind, "detail": self.detail}
        payload.update(self.fields)
        return json.dumps(payload, sort_keys=True)


# -- ingest ------------------------------------------------------------------

class MalformedLine(BrcError):
    def __init__(self, line_no: int, detail: str = ""):
        super().__init__(detail or f"unparseable line {line_no}", line_no=line_no)
        self.line_no = line_no


class MissingField(BrcError):
    def __init__(self, name: str, line_no: int | None = None):
        where = f" at line {line_no}" if line_no is not None else ""
        super().__init__(f"missing field {name!r}{where}", name=name, line_no=line_no)
        self.name = name
        self.line_no = line_no


class UnknownSymbol(BrcError):
    def __init__(self, raw_symbol: str):
        super().__init__(f"no mapping for raw symbol {raw_symbol!r}", raw_symbol=raw_symbol)
        self.raw_symbol = raw_symbol


class BadDecimal(BrcError):
    def __init__(self, field: str, detail: str = ""):
        super().__init__(detail or f"unparseable or out-of-range decimal in {field!r}", field=field)
        self.field = field


class BadSide(BrcError):
    def __init__(self, value: str):
        super().__init__(f"bad side {value!r}", value=value)
        self.value = value


class StagingUnavailable(BrcError):
    pass


# -- staging -----------------------------------------------------------------

class SessionLockHeld(BrcError):
    pass


class StorageFull(BrcError):
    pass


class OffsetOutOfRange(BrcError):
    def __init__(self, offset: int, tail: int):
        super().__init__(f"offset {offset} beyond tail {tail} + 1", offset=offset, tail=tail)
        self.offset = offset
        self.tail = tail


class CheckpointRegression(BrcError):
    def __init__(self, stored: int, requested: int):
        super().__init__(
            f"checkpoint regression: stored {stored}, requested {requested}",
            stored=stored, requested=requested,
        )
        self.stored = stored
        self.requested = requested


# -- columnar format ---------------------------------------------------------

class IllegalEncoding(BrcError):
    def __init__(self, physical_type: str, encoding: str):
        super().__init__(
            f"encoding {encoding} illegal for {physical_type}",
            physical_type=physical_type, encoding=encoding,
        )


class CorruptChunk(BrcError):
    pass


class SchemaViolation(BrcError):
    def __init__(self, row_index: int, column: str, detail: str = ""):
        super().__init__(
            detail or f"row {row_index} violates schema at column {column!r}",
            row_index=row_index, column=column,
        )
        self.row_index = row_index
        self.column = column


class BadMagic(BrcError):
    pass


class ChecksumMismatch(BrcError):
    def __init__(self, column: str):
        super().__init__(f"crc32c mismatch in column {column!r}", column=column)
        self.column = column


class FooterCorrupt(BrcError):
    pass


# -- object store ------------------------------------------------------------

class InvalidKey(BrcError):
    def __init__(self, key: str, detail: str = ""):
        super().__init__(detail or f"invalid object key {key!r}", key=key)
        self.key = key


class PreconditionFailed(BrcError):
    def __init__(self, key: str):
        super().__init__(f"object already exists: {key}", key=key)
        self.key = key


class NotFound(BrcError):
    def __init__(self, key: str):
        super().__init__(f"no such object: {key}", key=key)
        self.key = key


class BackendUnavailable(BrcError):
    pass


# -- lakehouse ---------------------------------------------------------------

class AlreadyInitialized(BrcError):
    pass


class NotInitialized(BrcError):
    pass


class CommitConflictExhausted(BrcError):
    pass


class InvalidAction(BrcError):
    pass


class NoSuchVersion(BrcError):
    def __init__(self, version: int, current: int):
        super().__init__(f"no version {version} (current {current})", version=version, current=current)
        self.version = version
        self.current = current


# -- orchestrator ------------------------------------------------------------

class CycleDetected(BrcError):
    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join(cycle), cycle=cycle)
        self.cycle = cycle


class ActionNotRegistered(BrcError):
    def __init__(self, task_id: str, action: str):
        super().__init__(f"task {task_id!r}: no action {action!r} registered", task_id=task_id, action=action)
        self.task_id = task_id
        self.action = action


class CorruptRunLog(BrcError):
    def __init__(self, line_no: int, detail: str = ""):
        super().__init__(detail or f"corrupt run log at line {line_no}", line_no=line_no)
        self.line_no = line_no


# -- query / cli / harness ---------------------------------------------------

class NonTradeEvent(BrcError):
    pass


class SinkError(BrcError):
    pass


class ConfigInvalid(BrcError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"config field {field!r}: {reason}", field=field, reason=reason)
        self.field = field
        self.reason = reason


class AssertionFailed(BrcError):
    pass
