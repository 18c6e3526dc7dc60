"""Transformation stage: drain staged records, deduplicate, partition, write
columnar files, and publish them atomically to the lakehouse; plus compaction.

Exactly-once effect is the composition of three guarantees, in this order:
at-least-once staging delivery, exact identity dedup (within the batch and
against live files overlapping the batch's time range), and
commit-then-checkpoint. A crash between the table commit and the checkpoint
merely redelivers records that then die in dedup.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import crashpoints
from .errors import InvalidAction
from .events import MarketEvent
from .fixedpoint import us_to_date
from .lakeformat import BYTES, INT64, ColumnSchema, read_file, write_file
from .lakehouse import AddFile, LakeTable, PartitionKey, RemoveFile
from .staging import StagedRecord, StagingStore

SCHEMA_ID = "trades_v1"

TABLE_COLUMNS: list[tuple[str, str]] = [
    ("event_time_us", INT64),
    ("ingest_time_us", INT64),
    ("source", BYTES),
    ("stream", BYTES),
    ("symbol", BYTES),
    ("sequence", INT64),
    ("event_id", BYTES),
    ("price_e8", INT64),
    ("qty_e8", INT64),
    ("side", BYTES),
]

TABLE_SCHEMA = [ColumnSchema(name, ptype) for name, ptype in TABLE_COLUMNS]


def event_to_row(event: MarketEvent) -> tuple:
    return (
        event.event_time_us,
        event.ingest_time_us,
        event.source.encode(),
        event.stream.encode(),
        event.symbol.encode(),
        event.sequence,
        event.event_id.encode(),
        event.price_e8,
        event.qty_e8,
        event.side.encode(),
    )


def event_from_row(row: tuple) -> MarketEvent:
    return MarketEvent(
        event_time_us=row[0],
        ingest_time_us=row[1],
        source=row[2].decode(),
        stream=row[3].decode(),
        symbol=row[4].decode(),
        sequence=row[5],
        event_id=row[6].decode(),
        price_e8=row[7],
        qty_e8=row[8],
        side=row[9].decode(),
    )


def partition_key(event: MarketEvent) -> PartitionKey:
    return PartitionKey(symbol=event.symbol, date=us_to_date(event.event_time_us))


def dedup(records: list[StagedRecord]) -> tuple[list[StagedRecord], int]:
    """First occurrence per dedup identity wins (lowest offset); later
    occurrences are dropped. Records must arrive in offset order."""
    seen: set[tuple] = set()
    kept = []
    for record in records:
        identity = record.event.identity
        if identity in seen:
            continue
        seen.add(identity)
        kept.append(record)
    return kept, len(records) - len(kept)


def _live_identities(
    store, table: LakeTable, partition: PartitionKey, t_min: int, t_max: int
) -> set[tuple]:
    """Identities already present in the partition's live files overlapping
    [t_min, t_max] — the exact cross-batch dedup check (no index, no bloom)."""
    snapshot = table.snapshot_at()
    identities: set[tuple] = set()
    for add in snapshot.live_files.values():
        if add.partition != partition:
            continue
        if add.max_event_time_us < t_min or add.min_event_time_us > t_max:
            continue
        parsed = read_file(store.get(add.path), projection=["source", "stream", "symbol", "event_id"])
        for src, stream, sym, eid in zip(
            parsed.columns["source"], parsed.columns["stream"],
            parsed.columns["symbol"], parsed.columns["event_id"],
        ):
            identities.add((src.decode(), stream.decode(), sym.decode(), eid.decode()))
    return identities


@dataclass
class ExportResult:
    rows_published: int
    version: int | None
    next_checkpoint: int
    dropped_duplicates: int


def export_job(
    staging: StagingStore,
    store,
    table: LakeTable,
    connector_id: str,
    max_records: int = 1_000_000_000,
    committer: str = "etl",
    now_us: int | None = None,
) -> ExportResult:
    """One unit of export work: drain -> dedup -> partition -> write -> commit
    -> checkpoint. Idempotent under replay at any crash point."""
    records, next_checkpoint = staging.drain_batch(connector_id, max_records)
    crashpoints.crashpoint("etl.post_drain")
    if not records:
        return ExportResult(0, None, next_checkpoint, 0)

    kept, dropped = dedup(records)

    groups: dict[PartitionKey, list[MarketEvent]] = {}
    for record in kept:
        groups.setdefault(partition_key(record.event), []).append(record.event)

    sort_key = lambda e: (e.event_time_us, e.sequence, e.event_id)  # noqa: E731
    published: dict[PartitionKey, list[MarketEvent]] = {}
    for partition, events in groups.items():
        lo = min(e.event_time_us for e in events)
        hi = max(e.event_time_us for e in events)
        known = _live_identities(store, table, partition, lo, hi)
        survivors = [e for e in events if e.identity not in known]
        dropped += len(events) - len(survivors)
        if survivors:
            survivors.sort(key=sort_key)
            published[partition] = survivors

    if not published:
        staging.commit_checkpoint(connector_id, next_checkpoint)
        return ExportResult(0, None, next_checkpoint, dropped)

    actions = []
    total_rows = 0
    for partition in sorted(published, key=lambda p: (p.symbol, p.date)):
        events = published[partition]
        data = write_file([event_to_row(e) for e in events], TABLE_SCHEMA)
        key = table.data_key(partition, committer)
        store.put(key, data)
        actions.append(
            AddFile(
                path=key,
                partition=partition,
                rows=len(events),
                bytes=len(data),
                min_event_time_us=events[0].event_time_us,
                max_event_time_us=events[-1].event_time_us,
            )
        )
        total_rows += len(events)
    crashpoints.crashpoint("etl.pre_commit")
    entry = table.commit(actions, committer=committer, now_us=now_us)
    crashpoints.crashpoint("etl.post_commit_pre_checkpoint")
    staging.commit_checkpoint(connector_id, next_checkpoint)
    return ExportResult(total_rows, entry.version, next_checkpoint, dropped)


def export_all(
    staging: StagingStore,
    store,
    table: LakeTable,
    connector_id: str,
    max_records: int = 100_000,
    committer: str = "etl",
) -> ExportResult:
    """Run export_job until the connector's staging backlog is drained."""
    total_rows = 0
    dropped = 0
    version = None
    while True:
        result = export_job(staging, store, table, connector_id, max_records, committer)
        total_rows += result.rows_published
        dropped += result.dropped_duplicates
        version = result.version or version
        if result.next_checkpoint >= staging.tail_offset(connector_id):
            return ExportResult(total_rows, version, result.next_checkpoint, dropped)


def compact(
    store,
    table: LakeTable,
    partition: PartitionKey,
    min_files: int = 2,
    committer: str = "compact",
    now_us: int | None = None,
) -> int | None:
    """Merge a partition's live files into one; no-op below min_files.

    A concurrent compaction of the same partition loses the OCC race: its
    RemoveFiles are no longer live on rebase, so the commit raises
    InvalidAction and the loser aborts cleanly, leaving an orphaned file.
    """
    snapshot = table.snapshot_at()
    victims = [a for a in snapshot.live_files.values() if a.partition == partition]
    if len(victims) < min_files:
        return None
    events: list[MarketEvent] = []
    for add in sorted(victims, key=lambda a: a.path):
        for row in read_file(store.get(add.path)).rows():
            events.append(event_from_row(row))
    events.sort(key=lambda e: (e.event_time_us, e.sequence, e.event_id))
    data = write_file([event_to_row(e) for e in events], TABLE_SCHEMA)
    key = table.data_key(partition, committer)
    store.put(key, data)
    crashpoints.crashpoint("etl.mid_compaction")
    actions = [
        AddFile(
            path=key,
            partition=partition,
            rows=len(events),
            bytes=len(data),
            min_event_time_us=events[0].event_time_us,
            max_event_time_us=events[-1].event_time_us,
        )
    ] + [RemoveFile(a.path) for a in sorted(victims, key=lambda v: v.path)]
    try:
        entry = table.commit(actions, committer=committer, now_us=now_us)
    except InvalidAction:
        return None  # lost the race to a concurrent compaction
    return entry.version


def live_partitions(table: LakeTable) -> list[PartitionKey]:
    snapshot = table.snapshot_at()
    return sorted({a.partition for a in snapshot.live_files.values()},
                  key=lambda p: (p.symbol, p.date))


# -- orchestrator action bindings ------------------------------------------------

def build_action_registry(app) -> dict:
    """Named actions for DAG tasks, bound to an AppContext (see cli module).

    ingest.run    {"config_path": path} or {"connector": {...inline config...}}
    etl.export    {"connector_id": id, "table_id": id, "max_records": n}
    etl.compact   {"table_id": id, "partition": "symbol=S/date=D" | "all",
                   "min_files": n}
    """
    from .events import ConnectorConfig
    from .ingest import run_connector

    def ingest_run(ctx) -> None:
        if "config_path" in ctx.params:
            config = ConnectorConfig.from_file(ctx.params["config_path"])
        else:
            config = ConnectorConfig.from_dict(ctx.params["connector"])
        run_connector(config, app.staging)

    def etl_export(ctx) -> None:
        table = app.table(ctx.params["table_id"])
        export_all(
            app.staging, app.store, table,
            connector_id=ctx.params["connector_id"],
            max_records=int(ctx.params.get("max_records", 100_000)),
        )

    def etl_compact(ctx) -> None:
        table = app.table(ctx.params["table_id"])
        spec = ctx.params.get("partition", "all")
        min_files = int(ctx.params.get("min_files", 2))
        if spec == "all":
            partitions = live_partitions(table)
        else:
            partitions = [parse_partition(spec)]
        for partition in partitions:
            compact(app.store, table, partition, min_files=min_files)

    return {"ingest.run": ingest_run, "etl.export": etl_export, "etl.compact": etl_compact}


def parse_partition(spec: str) -> PartitionKey:
    """Parse the rendered form symbol=SYM/date=YYYY-MM-DD."""
    try:
        symbol_part, date_part = spec.split("/")
        assert symbol_part.startswith("symbol=") and date_part.startswith("date=")
        return PartitionKey(symbol=symbol_part[7:], date=date_part[5:])
    except (ValueError, AssertionError):
        raise InvalidAction(f"bad partition spec {spec!r}; want symbol=SYM/date=YYYY-MM-DD")
