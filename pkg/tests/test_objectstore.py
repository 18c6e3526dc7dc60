import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brclake.errors import InvalidKey, NotFound, PreconditionFailed
from brclake.objectstore import FsStore, validate_key


def test_put_then_head_size(tmp_path):
    store = FsStore(tmp_path)
    store.put("a/b", bytes([1, 2, 3]))
    assert store.head("a/b").size_bytes == 3


def test_get_round_trip_and_missing(tmp_path):
    store = FsStore(tmp_path)
    store.put("k", b"payload")
    assert store.get("k") == b"payload"
    with pytest.raises(NotFound):
        store.get("missing")
    store.put("empty", b"")
    assert store.get("empty") == b""


def test_conditional_put_second_fails(tmp_path):
    store = FsStore(tmp_path)
    store.put("once", b"first", if_none_match=True)
    with pytest.raises(PreconditionFailed):
        store.put("once", b"second", if_none_match=True)
    assert store.get("once") == b"first"


def test_unconditional_put_overwrites(tmp_path):
    store = FsStore(tmp_path)
    store.put("k", b"v1")
    store.put("k", b"v2")
    assert store.get("k") == b"v2"


def test_list_prefix_sorted(tmp_path):
    store = FsStore(tmp_path)
    for key in ("b/1", "a/2", "a/1"):
        store.put(key, b"")
    assert [m.key for m in store.list("a/")] == ["a/1", "a/2"]
    assert [m.key for m in store.list("")] == ["a/1", "a/2", "b/1"]
    assert store.list("zz/") == []


def test_delete_idempotent_and_head_after(tmp_path):
    store = FsStore(tmp_path)
    store.put("k", b"x")
    store.delete("k")
    store.delete("k")
    with pytest.raises(NotFound):
        store.head("k")


def test_etag_is_content_md5(tmp_path):
    import hashlib
    store = FsStore(tmp_path)
    meta = store.put("k", b"hello")
    assert meta.etag == hashlib.md5(b"hello").hexdigest()
    assert store.head("k").etag == meta.etag


def test_key_validation():
    validate_key("a/b.c/d=e/f-g_h")
    for bad in ("", "/lead", "a//b", "a/../b" + "!", "sp ace", "a" * 901):
        with pytest.raises(InvalidKey):
            validate_key(bad)


def test_concurrent_conditional_put_single_winner(tmp_path):
    store = FsStore(tmp_path)
    barrier = threading.Barrier(8)
    outcomes = []
    lock = threading.Lock()

    def attempt(i):
        barrier.wait()
        try:
            store.put("contested", f"writer-{i}".encode(), if_none_match=True)
            with lock:
                outcomes.append(i)
        except PreconditionFailed:
            pass

    threads = [threading.Thread(target=attempt, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(outcomes) == 1
    assert store.get("contested") == f"writer-{outcomes[0]}".encode()


_KEY_SEGMENT = st.text(alphabet="abcd01", min_size=1, max_size=3)
# two-level keys under distinct leaf names cannot prefix-collide on the FS
_KEYS = st.lists(
    st.tuples(_KEY_SEGMENT, _KEY_SEGMENT).map(lambda t: f"{t[0]}/leaf-{t[1]}"),
    min_size=1, max_size=12, unique=True,
)


@given(_KEYS, st.integers(min_value=0, max_value=255))
@settings(max_examples=30, deadline=None)
def test_listing_total_order_any_insertion(keys, fill):
    import tempfile
    with tempfile.TemporaryDirectory() as root:
        store = FsStore(root)
        for key in keys:
            store.put(key, bytes([fill]))
        listed = [m.key for m in store.list("")]
        assert listed == sorted(keys)
        for key in keys:
            assert store.get(key) == bytes([fill])
