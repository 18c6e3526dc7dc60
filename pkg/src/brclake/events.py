"""Raw and normalized market event records plus connector configuration."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigInvalid
from .fixedpoint import I64_MAX, I64_MIN

SOURCE_RE = re.compile(r"^[a-z0-9_-]+$")
SYMBOL_RE = re.compile(r"^[A-Z0-9]+-[A-Z0-9]+$")

STREAMS = ("trade", "quote", "book_snapshot")
SIDES = ("buy", "sell", "na")

# payload keys a raw event must carry, by stream kind
REQUIRED_PAYLOAD = {"trade": ("price", "qty", "side", "id")}


@dataclass
class RawEvent:
    """Source-native record as emitted by a connector, before normalization."""

    source: str
    stream: str
    raw_symbol: str
    event_time_us: int
    payload: dict[str, str]


@dataclass(frozen=True)
class MarketEvent:
    """Canonical normalized tick; dedup identity is (source, stream, symbol, event_id)."""

    source: str
    stream: str
    symbol: str
    event_time_us: int
    ingest_time_us: int
    sequence: int
    event_id: str
    price_e8: int
    qty_e8: int
    side: str

    @property
    def identity(self) -> tuple[str, str, str, str]:
        return (self.source, self.stream, self.symbol, self.event_id)

    def validate(self) -> None:
        assert SOURCE_RE.match(self.source), f"bad source {self.source!r}"
        assert self.stream in STREAMS, f"bad stream {self.stream!r}"
        assert SYMBOL_RE.match(self.symbol), f"bad symbol {self.symbol!r}"
        assert self.event_time_us > 0
        assert 0 <= self.sequence <= I64_MAX
        assert I64_MIN <= self.price_e8 <= I64_MAX
        assert I64_MIN <= self.qty_e8 <= I64_MAX
        assert self.side in SIDES, f"bad side {self.side!r}"
        if self.stream == "trade":
            assert self.price_e8 > 0 and self.qty_e8 > 0
            assert self.side in ("buy", "sell")

    def sort_key(self) -> tuple:
        # (event_time_us, sequence, event_id) is the contractual order; the
        # remaining fields only break ties between unrelated sources.
        return (self.event_time_us, self.sequence, self.event_id,
                self.symbol, self.source, self.stream)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "stream": self.stream,
            "symbol": self.symbol,
            "event_time_us": self.event_time_us,
            "ingest_time_us": self.ingest_time_us,
            "sequence": self.sequence,
            "event_id": self.event_id,
            "price_e8": self.price_e8,
            "qty_e8": self.qty_e8,
            "side": self.side,
        }

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> "MarketEvent":
        return cls(
            source=obj["source"],
            stream=obj["stream"],
            symbol=obj["symbol"],
            event_time_us=obj["event_time_us"],
            ingest_time_us=obj["ingest_time_us"],
            sequence=obj["sequence"],
            event_id=obj["event_id"],
            price_e8=obj["price_e8"],
            qty_e8=obj["qty_e8"],
            side=obj["side"],
        )


@dataclass
class RateLimit:
    rate_per_s: int = 1_000_000
    burst: int = 1_000_000


@dataclass
class ConnectorConfig:
    """One connector session: synthetic generation or file replay.

    ``symbols`` maps raw source symbols to normalized BASE-QUOTE form; its
    insertion order drives the synthetic generator's round-robin.
    ``ingest_time_mode`` selects wall-clock ingest stamps ("wall") or the
    event's own timestamp ("event_time"), the latter making whole runs
    reproducible for scenario oracles.
    """

    connector_id: str
    kind: str  # "synthetic" | "replay"
    source: str
    symbols: dict[str, str]
    seed: int = 0
    count: int = 0
    dup_prob_bp: int = 0
    rate_limit: RateLimit = field(default_factory=RateLimit)
    replay_path: str = ""
    ingest_time_mode: str = "wall"
    batch_size: int = 500

    def validate(self) -> None:
        if not self.connector_id:
            raise ConfigInvalid("connector_id", "must be non-empty")
        if self.kind not in ("synthetic", "replay"):
            raise ConfigInvalid("kind", f"unknown connector kind {self.kind!r}")
        if not SOURCE_RE.match(self.source):
            raise ConfigInvalid("source", f"{self.source!r} must match [a-z0-9_-]+")
        if not self.symbols:
            raise ConfigInvalid("symbols", "at least one symbol mapping required")
        for raw, normalized in self.symbols.items():
            if not SYMBOL_RE.match(normalized):
                raise ConfigInvalid("symbols", f"{raw!r} maps to non-canonical {normalized!r}")
        if not 0 <= self.dup_prob_bp <= 10_000:
            raise ConfigInvalid("dup_prob_bp", "must be within [0, 10000]")
        if self.kind == "synthetic" and self.count < 0:
            raise ConfigInvalid("count", "must be >= 0")
        if self.kind == "replay" and not self.replay_path:
            raise ConfigInvalid("replay_path", "required for replay connectors")
        if self.rate_limit.rate_per_s < 1:
            raise ConfigInvalid("rate_limit.rate_per_s", "must be >= 1")
        if self.rate_limit.burst < 1:
            raise ConfigInvalid("rate_limit.burst", "must be >= 1")
        if self.ingest_time_mode not in ("wall", "event_time"):
            raise ConfigInvalid("ingest_time_mode", f"unknown mode {self.ingest_time_mode!r}")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size", "must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ConnectorConfig":
        rate = obj.get("rate_limit") or {}
        cfg = cls(
            connector_id=obj.get("connector_id", ""),
            kind=obj.get("kind", ""),
            source=obj.get("source", ""),
            symbols=dict(obj.get("symbols") or {}),
            seed=int(obj.get("seed", 0)),
            count=int(obj.get("count", 0)),
            dup_prob_bp=int(obj.get("dup_prob_bp", 0)),
            rate_limit=RateLimit(
                rate_per_s=int(rate.get("rate_per_s", 1_000_000)),
                burst=int(rate.get("burst", 1_000_000)),
            ),
            replay_path=obj.get("replay_path", ""),
            ingest_time_mode=obj.get("ingest_time_mode", "wall"),
            batch_size=int(obj.get("batch_size", 500)),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ConnectorConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
