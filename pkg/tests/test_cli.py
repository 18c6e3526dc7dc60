import json
import os
import subprocess
import sys

import pytest

from brclake.cli import build_parser, parse_bucket_width
from brclake.config import load_config
from brclake.errors import ConfigInvalid


def _brc(*args, data_root=None, env_extra=None):
    env = dict(os.environ)
    env.pop("BRC_CONFIG", None)
    if data_root is not None:
        env["BRC_DATA_ROOT"] = str(data_root)
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "brclake.cli", *args],
                          capture_output=True, text=True, env=env)


def _connector_file(tmp_path, count=50, connector_id="c1"):
    path = tmp_path / f"{connector_id}.json"
    path.write_text(json.dumps({
        "connector_id": connector_id, "kind": "synthetic", "source": "syn",
        "symbols": {"BTCUSDT": "BTC-USDT"}, "seed": 5, "count": count,
        "ingest_time_mode": "event_time",
    }))
    return path


# -- config ---------------------------------------------------------------------

def test_minimal_config_defaults(tmp_path):
    path = tmp_path / "app.json"
    path.write_text(json.dumps({"data_root": str(tmp_path / "data")}))
    config = load_config(str(path), env={})
    assert config.store_kind == "fs"
    assert config.dags_dir == tmp_path / "data" / "dags"
    assert config.tables[0]["table_id"] == "trades"


def test_s3_config_requires_secret(tmp_path):
    path = tmp_path / "app.json"
    path.write_text(json.dumps({
        "data_root": str(tmp_path / "data"), "store": "s3",
        "s3": {"endpoint": "http://x:1", "region": "r", "access_key": "k", "bucket": "b"},
    }))
    with pytest.raises(ConfigInvalid):
        load_config(str(path), env={})
    config = load_config(str(path), env={"BRC_S3_SECRET_KEY": "s"})
    assert config.s3.secret_key == "s"


def test_env_data_root_overrides_file(tmp_path):
    path = tmp_path / "app.json"
    path.write_text(json.dumps({"data_root": str(tmp_path / "from-file")}))
    config = load_config(str(path), env={"BRC_DATA_ROOT": str(tmp_path / "from-env")})
    assert config.data_root == tmp_path / "from-env"


def test_missing_data_root_rejected():
    with pytest.raises(ConfigInvalid):
        load_config(None, env={})


# -- exit codes and error kinds ------------------------------------------------------

def test_lake_init_fresh_exit_zero(tmp_path):
    result = _brc("lake", "init", "--table", "trades", data_root=tmp_path)
    assert result.returncode == 0
    assert json.loads(result.stdout)["version"] == 1


def test_unknown_flag_exit_two(tmp_path):
    result = _brc("--bogus", data_root=tmp_path)
    assert result.returncode == 2
    assert "usage" in result.stderr.lower()


def test_query_uninitialized_table_error_kind(tmp_path):
    result = _brc("query", "--table", "trades", "--symbols", "BTC-USDT",
                  "--from", "2020-01-01T00:00:00Z", "--to", "2020-01-02T00:00:00Z",
                  data_root=tmp_path)
    assert result.returncode == 1
    assert json.loads(result.stderr.splitlines()[-1])["error"] == "NotInitialized"


def test_second_init_error_kind(tmp_path):
    assert _brc("lake", "init", "--table", "t", data_root=tmp_path).returncode == 0
    result = _brc("lake", "init", "--table", "t", data_root=tmp_path)
    assert result.returncode == 1
    assert json.loads(result.stderr)["error"] == "AlreadyInitialized"


def test_help_lists_every_subcommand():
    result = subprocess.run([sys.executable, "-m", "brclake.cli", "--help"],
                            capture_output=True, text=True)
    for group in ("ingest", "staging", "etl", "sched", "query", "lake"):
        assert group in result.stdout
    for group, subs in [("ingest", ["run"]), ("staging", ["prune"]),
                        ("etl", ["export", "compact"]),
                        ("sched", ["start", "run-once", "backfill"]),
                        ("lake", ["init", "log", "audit"])]:
        sub_help = subprocess.run([sys.executable, "-m", "brclake.cli", group, "--help"],
                                  capture_output=True, text=True)
        for name in subs:
            assert name in sub_help.stdout


def test_bucket_width_parsing():
    assert parse_bucket_width("1m") == 60_000_000
    assert parse_bucket_width("500ms") == 500_000
    assert parse_bucket_width("2h") == 7_200_000_000
    with pytest.raises(ConfigInvalid):
        parse_bucket_width("five minutes")


def test_parser_covers_spec_flags():
    parser = build_parser()
    args = parser.parse_args([
        "query", "--table", "trades", "--symbols", "BTC-USD,ETH-USD",
        "--from", "2021-01-01T00:00:00Z", "--to", "2021-01-02T00:00:00Z",
        "--version", "3", "--ohlcv", "1m", "--format", "jsonl", "--out", "-",
    ])
    assert args.version == 3 and args.format == "jsonl"


# -- full pipeline through the CLI ---------------------------------------------------------

def test_pipeline_and_prune_via_cli(tmp_path):
    assert _brc("lake", "init", "--table", "trades", data_root=tmp_path).returncode == 0
    connector = _connector_file(tmp_path, count=120)
    result = _brc("ingest", "run", "--config", str(connector), data_root=tmp_path)
    assert result.returncode == 0
    assert json.loads(result.stdout)["events_appended"] == 120

    result = _brc("etl", "export", "--connector", "c1", "--table", "trades",
                  "--max-records", "50", data_root=tmp_path)
    assert result.returncode == 0
    out = json.loads(result.stdout)
    assert out["rows_published"] == 120 and out["next_checkpoint"] == 120

    result = _brc("etl", "compact", "--table", "trades", "--all", data_root=tmp_path)
    assert result.returncode == 0

    result = _brc("query", "--table", "trades", "--symbols", "BTC-USDT",
                  "--from", "2020-09-13T00:00:00Z", "--to", "2020-09-15T00:00:00Z",
                  "--format", "jsonl", data_root=tmp_path)
    assert result.returncode == 0
    assert len(result.stdout.splitlines()) == 120

    result = _brc("staging", "prune", "--connector", "c1", data_root=tmp_path)
    assert result.returncode == 0

    result = _brc("lake", "audit", "--table", "trades", data_root=tmp_path)
    report = json.loads(result.stdout)
    assert result.returncode == 0 and report["dangling"] == []
    assert len(report["orphans"]) >= 1  # compaction leaves originals unreferenced

    result = _brc("lake", "log", "--table", "trades", data_root=tmp_path)
    entries = [json.loads(line) for line in result.stdout.splitlines()]
    assert [e["version"] for e in entries] == list(range(1, len(entries) + 1))


def test_sched_backfill_via_cli(tmp_path):
    assert _brc("lake", "init", "--table", "trades", data_root=tmp_path).returncode == 0
    connector = _connector_file(tmp_path, count=30)
    dags = tmp_path / "dags"
    dags.mkdir()
    (dags / "pipeline.json").write_text(json.dumps({
        "dag_id": "pipeline",
        "schedule": {"interval": {"anchor_us": 0, "period_us": 3_600_000_000}},
        "tasks": [
            {"task_id": "ingest", "action": "ingest.run",
             "params": {"config_path": str(connector)}},
            {"task_id": "export", "depends_on": ["ingest"], "action": "etl.export",
             "params": {"connector_id": "c1", "table_id": "trades"}},
        ],
    }))
    result = _brc("sched", "backfill", "--dag", "pipeline",
                  "--from", "1970-01-01T00:00:00Z", "--to", "1970-01-01T03:00:00Z",
                  "--dags", str(dags), data_root=tmp_path)
    assert result.returncode == 0, result.stderr
    out = json.loads(result.stdout)
    assert len(out["runs"]) == 3 and out["failed"] == 0
    # ingest ran 3 times but the table holds each identity once
    result = _brc("query", "--table", "trades", "--symbols", "BTC-USDT",
                  "--from", "2020-09-13T00:00:00Z", "--to", "2020-09-15T00:00:00Z",
                  data_root=tmp_path)
    assert len(result.stdout.splitlines()) == 31  # header + 30 rows
