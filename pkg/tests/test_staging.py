import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brclake.errors import CheckpointRegression, OffsetOutOfRange, SessionLockHeld
from brclake.staging import StagingStore

from conftest import make_event


def _events(n, start=0):
    return [make_event(event_id=f"e-{start + i}", sequence=start + i,
                       event_time_us=1_600_000_000_000_000 + (start + i) * 1000)
            for i in range(n)]


def test_first_batch_offsets_dense_from_zero(tmp_path):
    store = StagingStore(tmp_path)
    with store.open_session("c") as session:
        assert session.append_batch(_events(3)) == (0, 2)
        assert session.append_batch(_events(2, start=3)) == (3, 4)


def test_batch_crossing_segment_cap(tmp_path):
    store = StagingStore(tmp_path, max_segment_records=10_000)
    with store.open_session("c") as session:
        first, last = session.append_batch(_events(10_001))
    assert (first, last) == (0, 10_000)
    segments = sorted(p.name for p in (tmp_path / "c").glob("seg-*.jsonl"))
    assert segments == [f"seg-{0:020}.jsonl", f"seg-{10_000:020}.jsonl"]
    assert len(store.read_from("c", 0, 20_000)) == 10_001


def test_read_from_window_and_tail(tmp_path):
    store = StagingStore(tmp_path)
    with store.open_session("c") as session:
        session.append_batch(_events(5))
    assert [r.offset for r in store.read_from("c", 0, 3)] == [0, 1, 2]
    assert store.read_from("c", 5, 10) == []
    with pytest.raises(OffsetOutOfRange):
        store.read_from("c", 9, 1)


def test_append_read_round_trip(tmp_path):
    store = StagingStore(tmp_path)
    events = _events(20)
    with store.open_session("c") as session:
        session.append_batch(events[:7])
        session.append_batch(events[7:])
    records = store.read_from("c", 0, 100)
    assert [r.event for r in records] == events
    assert [r.offset for r in records] == list(range(20))


@given(st.lists(st.integers(min_value=1, max_value=9), min_size=1, max_size=8))
@settings(max_examples=25, deadline=None)
def test_round_trip_property_any_batching(batch_sizes):
    import tempfile
    total = sum(batch_sizes)
    events = _events(total)
    with tempfile.TemporaryDirectory() as root:
        store = StagingStore(root, max_segment_records=7)
        cursor = 0
        with store.open_session("c") as session:
            for size in batch_sizes:
                session.append_batch(events[cursor:cursor + size])
                cursor += size
        assert [r.event for r in store.read_from("c", 0, total + 1)] == events


def test_durability_across_reopen(tmp_path):
    store = StagingStore(tmp_path)
    with store.open_session("c") as session:
        session.append_batch(_events(12))
    reopened = StagingStore(tmp_path)
    assert reopened.tail_offset("c") == 12
    assert len(reopened.read_from("c", 0, 100)) == 12


def test_torn_trailing_line_truncated_on_next_session(tmp_path):
    store = StagingStore(tmp_path)
    with store.open_session("c") as session:
        session.append_batch(_events(3))
    seg = next((tmp_path / "c").glob("seg-*.jsonl"))
    with open(seg, "ab") as f:
        f.write(b'{"offset": 3, "event_time_us": 99')  # crash mid-write
    assert store.tail_offset("c") == 3  # readers ignore the torn line
    with store.open_session("c") as session:
        session.append_batch(_events(1, start=3))
    records = store.read_from("c", 0, 10)
    assert [r.offset for r in records] == [0, 1, 2, 3]


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_commit_and_idempotence(tmp_path):
    store = StagingStore(tmp_path)
    assert store.committed_offset("c") == 0
    with store.open_session("c") as session:
        session.append_batch(_events(5))
    store.commit_checkpoint("c", 3)
    assert store.committed_offset("c") == 3
    store.commit_checkpoint("c", 3)  # idempotent
    assert store.committed_offset("c") == 3
    with pytest.raises(CheckpointRegression):
        store.commit_checkpoint("c", 2)


def test_drain_batch_does_not_advance(tmp_path):
    store = StagingStore(tmp_path)
    with store.open_session("c") as session:
        session.append_batch(_events(5))
    records, nxt = store.drain_batch("c", 3)
    assert [r.offset for r in records] == [0, 1, 2] and nxt == 3
    # crash before commit: drain again returns the same records
    records2, nxt2 = store.drain_batch("c", 3)
    assert [r.offset for r in records2] == [0, 1, 2] and nxt2 == 3
    store.commit_checkpoint("c", nxt2)
    records3, nxt3 = store.drain_batch("c", 3)
    assert [r.offset for r in records3] == [3, 4] and nxt3 == 5


def test_drain_caught_up(tmp_path):
    store = StagingStore(tmp_path)
    with store.open_session("c") as session:
        session.append_batch(_events(5))
    store.commit_checkpoint("c", 5)
    records, nxt = store.drain_batch("c", 10)
    assert records == [] and nxt == 5


# -- session lock --------------------------------------------------------------------

def test_second_session_blocked_while_held(tmp_path):
    store = StagingStore(tmp_path)
    session = store.open_session("c")
    try:
        with pytest.raises(SessionLockHeld):
            store.open_session("c")
    finally:
        session.close()
    store.open_session("c").close()  # released: can reacquire


def test_stale_lock_from_dead_pid_is_stolen(tmp_path):
    store = StagingStore(tmp_path)
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "lock").write_text('{"pid": 999999999, "token": "dead"}')
    store.open_session("c").close()


def test_distinct_connectors_are_independent(tmp_path):
    store = StagingStore(tmp_path)
    s1, s2 = store.open_session("a"), store.open_session("b")
    s1.append_batch(_events(2))
    s2.append_batch(_events(3))
    s1.close(), s2.close()
    assert store.tail_offset("a") == 2 and store.tail_offset("b") == 3


# -- prune -----------------------------------------------------------------------------

def test_prune_removes_only_fully_drained_sealed_segments(tmp_path):
    store = StagingStore(tmp_path, max_segment_records=5)
    with store.open_session("c") as session:
        session.append_batch(_events(12))  # segments [0..4], [5..9], [10..11]
    store.commit_checkpoint("c", 7)
    assert store.prune("c") == 1  # only segment 0..4 is fully below 7
    assert [r.offset for r in store.read_from("c", 7, 100)] == [7, 8, 9, 10, 11]
    store.commit_checkpoint("c", 12)
    assert store.prune("c") == 1  # 5..9 goes; newest segment always kept
    assert store.tail_offset("c") == 12


def test_checkpoint_cannot_exceed_tail(tmp_path):
    store = StagingStore(tmp_path)
    with store.open_session("c") as session:
        session.append_batch(_events(3))
    store.commit_checkpoint("c", 3)  # == tail is fine
    with pytest.raises(OffsetOutOfRange):
        store.commit_checkpoint("c", 4)
