"""Researcher-facing read path: pruned time-range scans with optional time
travel, OHLCV aggregation, and deterministic CSV/JSONL export.

Scans pin a snapshot at plan time, open only the files the partition and
min-max pruning admit, and k-way merge the per-file streams into one globally
sorted event stream. Renderings are fixed: e8 quantities always carry exactly
8 fractional digits, timestamps are ISO8601 with microseconds and a Z suffix,
so identical queries produce byte-identical output.
"""

from __future__ import annotations

import heapq
import io
import json
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import NonTradeEvent, SinkError
from .etl import TABLE_COLUMNS, event_from_row
from .events import MarketEvent
from .fixedpoint import format_e8, us_to_iso
from .lakeformat import read_file
from .lakehouse import LakeTable, list_files


@dataclass
class ScanRequest:
    table_id: str
    time_range: tuple[int, int]  # [t0_us, t1_us)
    symbols: set[str]
    version: int | None = None

    def validate(self) -> None:
        t0, t1 = self.time_range
        assert t0 < t1, "time range must be non-empty"
        assert self.symbols, "at least one symbol required"


def scan(store, table: LakeTable, request: ScanRequest) -> Iterator[MarketEvent]:
    """Events within the request's range and symbols, globally sorted by
    (event_time_us, sequence, event_id)."""
    request.validate()
    t0, t1 = request.time_range
    snapshot = table.snapshot_at(request.version)
    planned = list_files(snapshot, request.time_range, request.symbols)

    def file_stream(path: str) -> Iterator[MarketEvent]:
        for row in read_file(store.get(path)).rows():
            event = event_from_row(row)
            if t0 <= event.event_time_us < t1 and event.symbol in request.symbols:
                yield event

    streams = [file_stream(add.path) for add in planned]
    return heapq.merge(*streams, key=lambda e: e.sort_key())


# -- OHLCV ---------------------------------------------------------------------

@dataclass(frozen=True)
class OhlcvBar:
    bucket_start_us: int
    open_e8: int
    high_e8: int
    low_e8: int
    close_e8: int
    volume_e8: int
    trade_count: int


def ohlcv(events: Iterable[MarketEvent], width_us: int) -> list[OhlcvBar]:
    """Fixed-width buckets over a sorted trade stream; empty buckets omitted."""
    assert width_us > 0, "bucket width must be positive"
    bars: list[OhlcvBar] = []
    current: dict | None = None
    for event in events:
        if event.stream != "trade":
            raise NonTradeEvent(f"ohlcv over stream {event.stream!r}")
        bucket = event.event_time_us // width_us * width_us
        if current is None or current["bucket"] != bucket:
            if current is not None:
                bars.append(_close_bar(current))
            current = {
                "bucket": bucket,
                "open": event.price_e8,
                "high": event.price_e8,
                "low": event.price_e8,
                "close": event.price_e8,
                "volume": event.qty_e8,
                "count": 1,
            }
        else:
            current["high"] = max(current["high"], event.price_e8)
            current["low"] = min(current["low"], event.price_e8)
            current["close"] = event.price_e8
            current["volume"] += event.qty_e8
            current["count"] += 1
    if current is not None:
        bars.append(_close_bar(current))
    return bars


def _close_bar(acc: dict) -> OhlcvBar:
    return OhlcvBar(
        bucket_start_us=acc["bucket"],
        open_e8=acc["open"],
        high_e8=acc["high"],
        low_e8=acc["low"],
        close_e8=acc["close"],
        volume_e8=acc["volume"],
        trade_count=acc["count"],
    )


# -- export --------------------------------------------------------------------------

EVENT_HEADER = [name for name, _ in TABLE_COLUMNS]
BAR_HEADER = ["bucket_start_us", "open_e8", "high_e8", "low_e8", "close_e8",
              "volume_e8", "trade_count"]


def _render_event(event: MarketEvent) -> dict[str, str | int]:
    return {
        "event_time_us": us_to_iso(event.event_time_us),
        "ingest_time_us": us_to_iso(event.ingest_time_us),
        "source": event.source,
        "stream": event.stream,
        "symbol": event.symbol,
        "sequence": event.sequence,
        "event_id": event.event_id,
        "price_e8": format_e8(event.price_e8),
        "qty_e8": format_e8(event.qty_e8),
        "side": event.side,
    }


def _render_bar(bar: OhlcvBar) -> dict[str, str | int]:
    return {
        "bucket_start_us": us_to_iso(bar.bucket_start_us),
        "open_e8": format_e8(bar.open_e8),
        "high_e8": format_e8(bar.high_e8),
        "low_e8": format_e8(bar.low_e8),
        "close_e8": format_e8(bar.close_e8),
        "volume_e8": format_e8(bar.volume_e8),
        "trade_count": bar.trade_count,
    }


def _csv_field(value: str | int) -> str:
    s = str(value)
    if any(c in s for c in ',"\n\r'):
        return '"' + s.replace('"', '""') + '"'
    return s


def export_rows(
    rows: Iterable[dict[str, str | int]],
    header: list[str],
    fmt: str,
    sink: io.IOBase,
) -> int:
    """Write rendered rows as CSV (header + LF lines) or JSONL; returns count."""
    assert fmt in ("csv", "jsonl"), f"unknown format {fmt!r}"
    count = 0
    try:
        if fmt == "csv":
            sink.write((",".join(header) + "\n").encode())
            for row in rows:
                sink.write((",".join(_csv_field(row[h]) for h in header) + "\n").encode())
                count += 1
        else:
            for row in rows:
                sink.write((json.dumps(row, sort_keys=True) + "\n").encode())
                count += 1
    except OSError as exc:
        raise SinkError(str(exc))
    return count


def export_events(events: Iterable[MarketEvent], fmt: str, sink) -> int:
    return export_rows((_render_event(e) for e in events), EVENT_HEADER, fmt, sink)


def export_bars(bars: Iterable[OhlcvBar], fmt: str, sink) -> int:
    return export_rows((_render_bar(b) for b in bars), BAR_HEADER, fmt, sink)


def parse_event_csv(data: bytes) -> list[dict[str, str]]:
    """Inverse of the CSV event rendering (for round-trip checks)."""
    import csv

    reader = csv.reader(io.StringIO(data.decode(), newline=""))
    rows = list(reader)
    header = rows[0]
    return [dict(zip(header, row)) for row in rows[1:]]
