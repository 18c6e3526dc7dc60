"""Application configuration: JSON file merged with environment overrides
(environment wins), plus the runtime wiring shared by CLI commands and
scheduler actions.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid
from .lakehouse import LakeTable
from .objectstore import FsStore, S3Config, S3Store
from .staging import StagingStore

CONFIG_ENV = "BRC_CONFIG"
DATA_ROOT_ENV = "BRC_DATA_ROOT"

DEFAULT_TABLES = [{"table_id": "trades", "schema_id": "trades_v1"}]


@dataclass
class AppConfig:
    data_root: Path
    store_kind: str = "fs"
    s3: S3Config | None = None
    dags_dir: Path | None = None
    tables: list[dict] = field(default_factory=lambda: list(DEFAULT_TABLES))

    def schema_for(self, table_id: str) -> str:
        for entry in self.tables:
            if entry["table_id"] == table_id:
                return entry.get("schema_id", "trades_v1")
        return "trades_v1"


def load_config(path: str | None = None, env: dict | None = None) -> AppConfig:
    """Resolve configuration from an optional JSON file and the environment.

    Precedence: environment > file > defaults. The data root is created if
    missing and must be writable.
    """
    env = os.environ if env is None else env
    path = path or env.get(CONFIG_ENV)
    obj: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                obj = json.load(f)
        except OSError as exc:
            raise ConfigInvalid("config", f"cannot read {path}: {exc}")
        except ValueError as exc:
            raise ConfigInvalid("config", f"invalid JSON in {path}: {exc}")

    data_root = env.get(DATA_ROOT_ENV) or obj.get("data_root")
    if not data_root:
        raise ConfigInvalid("data_root", f"set in config file or {DATA_ROOT_ENV}")
    root = Path(data_root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / f".writable-{os.getpid()}"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise ConfigInvalid("data_root", f"{root} not writable: {exc}")

    store_kind = obj.get("store", "fs")
    s3 = None
    if store_kind == "s3":
        section = obj.get("s3") or {}
        s3 = S3Config(
            endpoint=env.get("BRC_S3_ENDPOINT") or section.get("endpoint", ""),
            region=env.get("BRC_S3_REGION") or section.get("region", ""),
            access_key=env.get("BRC_S3_ACCESS_KEY") or section.get("access_key", ""),
            secret_key=env.get("BRC_S3_SECRET_KEY") or section.get("secret_key", ""),
            bucket=env.get("BRC_S3_BUCKET") or section.get("bucket", ""),
        )
        s3.validate()
    elif store_kind != "fs":
        raise ConfigInvalid("store", f"unknown store kind {store_kind!r}")

    dags_dir = obj.get("dags_dir")
    return AppConfig(
        data_root=root,
        store_kind=store_kind,
        s3=s3,
        dags_dir=Path(dags_dir) if dags_dir else root / "dags",
        tables=list(obj.get("tables") or DEFAULT_TABLES),
    )


class AppContext:
    """Wired stores and tables for one process."""

    def __init__(self, config: AppConfig, probe_s3: bool = True):
        self.config = config
        if config.store_kind == "s3":
            store = S3Store(config.s3)
            if probe_s3:
                store.probe_conditional_put()
            self.store = store
        else:
            self.store = FsStore(config.data_root / "store")
        self.staging = StagingStore(config.data_root / "staging")
        self.runs_root = config.data_root / "runs"
        self._tables: dict[str, LakeTable] = {}

    def table(self, table_id: str) -> LakeTable:
        if table_id not in self._tables:
            self._tables[table_id] = LakeTable(self.store, table_id)
        return self._tables[table_id]
