import pytest

from bsl.blockstore import (
    HEADER_BYTES,
    SLOT_BYTES,
    SlotStore,
    TAG_EMPTY,
    TAG_END,
    TAG_NODE,
    pack_header,
    parse_header,
)
from bsl.hashing import Params

P = 101
B = 16


@pytest.fixture
def store():
    return SlotStore.in_memory(P, B)


def test_fresh_store_all_empty(store):
    for i in range(P):
        assert store.read_slot(i) == (TAG_EMPTY, 0, 0)


def test_write_then_read(store):
    store.write_slot(7, TAG_NODE, 123456, 3)
    assert store.read_slot(7) == (TAG_NODE, 123456, 3)


def test_out_of_range():
    s = SlotStore.in_memory(P, B)
    with pytest.raises(IndexError):
        s.read_slot(P)
    with pytest.raises(IndexError):
        s.read_slot(-1)
    with pytest.raises(IndexError):
        s.write_slot(P, TAG_NODE, 1, 1)


def test_empty_write_zeroes_payload(store):
    store.write_slot(3, TAG_NODE, 99, 2)
    d1 = store.image_digest()
    store.write_slot(3, TAG_EMPTY, 77, 5)  # payload must be dropped
    store.write_slot(3, TAG_NODE, 99, 2)
    assert store.image_digest() == d1
    store.write_slot(3, TAG_EMPTY)
    assert store.image_digest() == SlotStore.in_memory(P, B).image_digest()


def test_end_slot_zero_payload(store):
    store.write_slot(4, TAG_END, 42, 9)
    assert store.read_slot(4) == (TAG_END, 0, 0)


def test_distinct_block_charging(store):
    with store.operation() as stats:
        store.read_slot(1)
        store.read_slot(2)  # same block
    assert (stats.reads, stats.writes) == (1, 0)
    with store.operation() as stats:
        store.read_slot(1)
        store.read_slot(B)  # next block
    assert stats.reads == 2


def test_noop_operation(store):
    with store.operation() as stats:
        pass
    assert (stats.reads, stats.writes) == (0, 0)


def test_single_read_single_block(store):
    with store.operation() as stats:
        store.read_slot(0)
    assert (stats.reads, stats.writes) == (1, 0)


def test_run_block_arithmetic(store):
    # Reading [i, i+l) touches exactly floor((i+l-1)/B) - floor(i/B) + 1 blocks.
    for i in range(0, P - 20):
        for length in (1, 3, B, B + 1):
            if i + length > P:
                continue
            with store.operation() as stats:
                store.read_run(i, length)
            assert stats.reads == (i + length - 1) // B - i // B + 1


def test_write_run_within_block_single_write(store):
    with store.operation() as stats:
        store.write_run(B, [(TAG_NODE, i, 1) for i in range(1, B + 1)])
    assert stats.writes == 1


def test_string_of_block_size_spans_at_most_two_blocks():
    # Enumerate every start offset of a gamma = B sized read.
    s = SlotStore.in_memory(1009, B)
    for offset in range(B):
        with s.operation() as stats:
            s.read_run(offset, B)
        assert stats.reads <= 2


def test_wrapped_run_charges_both_pieces(store):
    with store.operation() as stats:
        store.read_run(P - 2, 4)  # wraps: slots 99,100,0,1
    assert stats.reads == 2
    recs = store.read_run(P - 2, 4)
    assert len(recs) == 4


def test_nested_operation_rejected(store):
    store.begin_op()
    with pytest.raises(RuntimeError):
        store.begin_op()
    store.end_op()
    with pytest.raises(RuntimeError):
        store.end_op()


def test_digest_lifecycle(store):
    fresh = store.image_digest()
    assert fresh == SlotStore.in_memory(P, B).image_digest()
    store.write_slot(10, TAG_NODE, 5, 1)
    assert store.image_digest() != fresh
    store.write_slot(10, TAG_EMPTY)
    assert store.image_digest() == fresh


def test_fill_empty_matches_slot_writes(store):
    other = SlotStore.in_memory(P, B)
    store.write_run(40, [(TAG_NODE, i, 2) for i in range(1, 8)])
    other.write_run(40, [(TAG_NODE, i, 2) for i in range(1, 8)])
    store.fill_empty(42, 3)
    for i in range(42, 45):
        other.write_slot(i, TAG_EMPTY)
    assert store.image_digest() == other.image_digest()


def test_header_roundtrip():
    params = Params.create(1000, 16, 16)
    raw = pack_header(params, 0xABCDEF)
    assert len(raw) == HEADER_BYTES
    info = parse_header(raw)
    assert info == {
        "capacity": 1000,
        "gamma": 16,
        "beta": params.beta,
        "block_size": 16,
        "table_slots": params.table_slots,
        "master_seed": 0xABCDEF,
    }
    with pytest.raises(ValueError):
        parse_header(b"XXXX" + raw[4:])


def test_file_backend_bit_identical(tmp_path):
    params = Params(2, 16, 8, table_slots=P)
    mem = SlotStore.in_memory(P, 8)
    disk = SlotStore.create_file(tmp_path / "t.bsl", params, 99)
    writes = [(5, TAG_NODE, 10, 1), (6, TAG_END, 0, 0), (P - 1, TAG_NODE, 7, 2)]
    for i, t, e, l in writes:
        mem.write_slot(i, t, e, l)
        disk.write_slot(i, t, e, l)
    assert mem.image_digest() == disk.image_digest()
    # Identical access sequences, identical accounting.
    for s in (mem, disk):
        with s.operation():
            s.read_run(3, 10)
            s.write_slot(20, TAG_NODE, 1, 1)
    assert mem.last_op == disk.last_op
    digest = disk.image_digest()
    disk.close()
    reopened, header = SlotStore.open_file(tmp_path / "t.bsl")
    assert header["master_seed"] == 99
    assert reopened.image_digest() == digest
    assert reopened.read_slot(5) == (TAG_NODE, 10, 1)
    reopened.close()


def test_file_size_guard(tmp_path):
    params = Params(2, 16, 8, table_slots=P)
    store = SlotStore.create_file(tmp_path / "t.bsl", params, 1)
    store.close()
    with open(tmp_path / "t.bsl", "ab") as f:
        f.write(b"junk")
    with pytest.raises(ValueError):
        SlotStore.open_file(tmp_path / "t.bsl")
