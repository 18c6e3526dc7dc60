"""Event production and normalization: synthetic generation, file replay,
token-bucket pacing, and the at-least-once connector runner.

The synthetic generator stands in for live exchange scrapers. It is fully
determined by (seed, count, symbols, dup_prob_bp) and exposes its internal
state between primary events, so a connector killed mid-run resumes from its
last saved state and regenerates the identical suffix (same timestamps,
prices, and sequence numbers). Redelivered events are absorbed downstream by
identity dedup.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from . import crashpoints
from .errors import BadDecimal, BadSide, MalformedLine, MissingField, UnknownSymbol
from .events import REQUIRED_PAYLOAD, ConnectorConfig, MarketEvent, RawEvent
from .fixedpoint import format_e8, parse_decimal_e8
from .staging import StagingStore

MASK64 = (1 << 64) - 1

SYNTHETIC_EPOCH_US = 1_600_000_000_000_000
START_PRICE_E8 = 10_000 * 10**8


class SplitMix64:
    """splitmix64 PRNG; the entire synthetic stream derives from it."""

    def __init__(self, state: int):
        self.state = state & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


@dataclass
class SyntheticState:
    """Generator position between primary events; JSON-serializable."""

    next_index: int
    prng_state: int
    price_e8: int
    last_event_time_us: int

    def to_dict(self) -> dict:
        return {
            "next_index": self.next_index,
            "prng_state": self.prng_state,
            "price_e8": self.price_e8,
            "last_event_time_us": self.last_event_time_us,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticState":
        return cls(
            next_index=obj["next_index"],
            prng_state=obj["prng_state"],
            price_e8=obj["price_e8"],
            last_event_time_us=obj["last_event_time_us"],
        )

    @classmethod
    def initial(cls, seed: int) -> "SyntheticState":
        return cls(0, seed & MASK64, START_PRICE_E8, SYNTHETIC_EPOCH_US)


def synthetic_steps(
    config: ConnectorConfig, state: SyntheticState | None = None
) -> Iterator[tuple[list[RawEvent], SyntheticState]]:
    """Yield ([primary event, injected duplicate?], state-after) per primary
    event, resuming from ``state`` when given."""
    st = state or SyntheticState.initial(config.seed)
    rng = SplitMix64(0)
    rng.state = st.prng_state
    raw_symbols = list(config.symbols.keys())
    price_e8 = st.price_e8
    t_us = st.last_event_time_us
    for n in range(st.next_index, config.count):
        t_us += (1 + rng.next_u64() % 1000) * 1000
        price_e8 = max(1, price_e8 + (rng.next_u64() % 101 - 50) * 10_000)
        qty_e8 = (1 + rng.next_u64() % 100) * 1_000_000
        side = "buy" if rng.next_u64() % 2 == 0 else "sell"
        event = RawEvent(
            source=config.source,
            stream="trade",
            raw_symbol=raw_symbols[n % len(raw_symbols)],
            event_time_us=t_us,
            payload={
                "price": format_e8(price_e8),
                "qty": format_e8(qty_e8),
                "side": side,
                "id": f"{config.connector_id}-{n}",
            },
        )
        batch = [event]
        if rng.next_u64() % 10_000 < config.dup_prob_bp:
            batch.append(event)
        yield batch, SyntheticState(n + 1, rng.state, price_e8, t_us)


def generate_synthetic(config: ConnectorConfig) -> Iterator[RawEvent]:
    """Flat deterministic event stream: primaries plus injected duplicates."""
    for batch, _ in synthetic_steps(config):
        yield from batch


# -- file replay ---------------------------------------------------------------

RAW_FIELDS = ("source", "stream", "raw_symbol", "event_time_us", "payload")


def replay_file(path: str | Path) -> Iterator[RawEvent]:
    """Yield RawEvents from a JSON Lines file, in file order."""
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError:
                raise MalformedLine(line_no)
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, f"line {line_no} is not a JSON object")
            for name in RAW_FIELDS:
                if name not in obj:
                    raise MissingField(name, line_no)
            payload = obj["payload"]
            if not isinstance(payload, dict):
                raise MalformedLine(line_no, f"payload on line {line_no} is not an object")
            for name in REQUIRED_PAYLOAD.get(obj["stream"], ()):
                if name not in payload:
                    raise MissingField(name, line_no)
            yield RawEvent(
                source=obj["source"],
                stream=obj["stream"],
                raw_symbol=obj["raw_symbol"],
                event_time_us=obj["event_time_us"],
                payload={k: str(v) for k, v in payload.items()},
            )


# -- normalization ---------------------------------------------------------------

def normalize(
    raw: RawEvent, config: ConnectorConfig, ingest_time_us: int, sequence: int
) -> MarketEvent:
    """Map a raw event to the canonical record.

    The per-(source, stream, symbol) sequence counter lives with the caller;
    normalization itself is pure.
    """
    symbol = config.symbols.get(raw.raw_symbol)
    if symbol is None:
        raise UnknownSymbol(raw.raw_symbol)
    if "id" not in raw.payload:
        raise MissingField("id")
    price_e8 = parse_decimal_e8(raw.payload["price"], "price") if "price" in raw.payload else 0
    qty_e8 = parse_decimal_e8(raw.payload["qty"], "qty") if "qty" in raw.payload else 0
    if raw.stream == "trade":
        side = raw.payload.get("side", "")
        if side not in ("buy", "sell"):
            raise BadSide(side)
        if price_e8 <= 0:
            raise BadDecimal("price", f"trade price {raw.payload.get('price')!r} not positive")
        if qty_e8 <= 0:
            raise BadDecimal("qty", f"trade qty {raw.payload.get('qty')!r} not positive")
    else:
        side = "na"
    event = MarketEvent(
        source=raw.source,
        stream=raw.stream,
        symbol=symbol,
        event_time_us=raw.event_time_us,
        ingest_time_us=ingest_time_us,
        sequence=sequence,
        event_id=raw.payload["id"],
        price_e8=price_e8,
        qty_e8=qty_e8,
        side=side,
    )
    event.validate()
    return event


def render_payload(event: MarketEvent) -> dict[str, str]:
    """Inverse of normalize for the payload fields, at 8 fractional digits."""
    return {
        "price": format_e8(event.price_e8),
        "qty": format_e8(event.qty_e8),
        "side": event.side,
        "id": event.event_id,
    }


# -- token bucket -----------------------------------------------------------------

@dataclass
class TokenBucket:
    """Continuous-refill token bucket; deterministic given call timestamps."""

    rate_per_s: int
    burst: int
    tokens: float = field(default=-1.0)
    last_us: int = 0

    def __post_init__(self):
        if self.tokens < 0:
            self.tokens = float(self.burst)

    def take(self, now_us: int) -> bool:
        elapsed = max(0, now_us - self.last_us)
        self.tokens = min(float(self.burst), self.tokens + elapsed * self.rate_per_s / 1_000_000)
        self.last_us = now_us
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True
        return False

    def wait_us(self) -> int:
        """Microseconds until one token is available (0 if already)."""
        if self.tokens >= 1.0:
            return 0
        deficit = 1.0 - self.tokens
        return int(deficit * 1_000_000 / self.rate_per_s) + 1


# -- connector runner ----------------------------------------------------------------

@dataclass
class SessionSummary:
    events_appended: int
    last_offset: int


class _SequenceCounters:
    """Per-(source, stream, symbol) monotone counters, JSON round-trippable."""

    def __init__(self, values: dict[str, int] | None = None):
        self.values = dict(values or {})

    def next_for(self, event_key: tuple[str, str, str]) -> int:
        key = "|".join(event_key)
        seq = self.values.get(key, 0)
        self.values[key] = seq + 1
        return seq


def run_connector(
    config: ConnectorConfig,
    staging: StagingStore,
    now_us: Callable[[], int] = lambda: time.time_ns() // 1000,
) -> SessionSummary:
    """Generate or replay events, normalize, and append to staging.

    Delivery is at-least-once: connector state (generator position plus
    sequence counters) is saved after every appended batch, so a crash replays
    at most one batch. Synthetic resume regenerates a byte-identical suffix.
    """
    config.validate()
    bucket = TokenBucket(config.rate_limit.rate_per_s, config.rate_limit.burst)
    appended = 0
    last_offset = -1
    with staging.open_session(config.connector_id) as session:
        saved = session.load_state() or {}
        counters = _SequenceCounters(saved.get("seq_counters"))

        if config.kind == "synthetic":
            state = saved.get("synthetic")
            start = SyntheticState.from_dict(state) if state else None
            steps = synthetic_steps(config, start)
        else:
            skip = int(saved.get("replay_line", 0))
            def replay_steps():
                for i, raw in enumerate(replay_file(config.replay_path)):
                    if i < skip:
                        continue
                    yield [raw], None
            steps = replay_steps()
            replay_line = skip

        batch: list[MarketEvent] = []
        batch_state: dict = {}

        def flush() -> None:
            nonlocal appended, last_offset
            if not batch:
                return
            _, last = session.append_batch(batch)
            appended += len(batch)
            last_offset = last
            crashpoints.crashpoint("ingest.append")
            session.save_state({"seq_counters": counters.values, **batch_state})
            batch.clear()

        for raws, gen_state in steps:
            for raw in raws:
                while not bucket.take(now_us()):
                    time.sleep(bucket.wait_us() / 1_000_000)
                ingest_time = raw.event_time_us if config.ingest_time_mode == "event_time" else now_us()
                seq = counters.next_for((raw.source, raw.stream, config.symbols[raw.raw_symbol]))
                batch.append(normalize(raw, config, ingest_time, seq))
            if config.kind == "synthetic":
                batch_state = {"synthetic": gen_state.to_dict()}
            else:
                replay_line += 1
                batch_state = {"replay_line": replay_line}
            if len(batch) >= config.batch_size:
                flush()
        flush()
    return SessionSummary(events_appended=appended, last_offset=last_offset)
