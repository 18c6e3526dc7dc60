"""brclake: a desk-scale market-data lakehouse pipeline.

Deterministic ingest connectors feed an append-only staging buffer; an export
job deduplicates, partitions, and publishes columnar files to an object store
under a versioned transaction log; queries prune by partition and min-max
stats. A DAG scheduler with retries, backfill, and crash recovery drives the
whole flow. CLI entrypoints: ``brc`` and ``brc-harness``.
"""

__version__ = "0.1.0"
