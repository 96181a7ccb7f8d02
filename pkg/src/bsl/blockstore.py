"""The external memory: a p-slot array grouped into blocks of B slots.

Two backends share one access path: an in-memory bytearray and a flat
file (64-byte header + slot area) via mmap.  Slot writes are bit-exact so
the byte image of the slot area is the canonical machine state; reads and
writes inside a logical operation are charged per distinct block touched.
"""

from __future__ import annotations

import hashlib
import mmap
import os
import struct
from contextlib import contextmanager
from dataclasses import dataclass

from .hashing import Params

TAG_EMPTY = 0
TAG_NODE = 1
TAG_END = 2

SLOT_BYTES = 10
HEADER_BYTES = 64
MAGIC = b"BSL1"
FORMAT_VERSION = 1

_SLOT = struct.Struct(">BQB")
_EMPTY_SLOT = bytes(SLOT_BYTES)
# magic, version, capacity, gamma, beta, block_size, table_slots, master_seed
_HEADER = struct.Struct(">4sH6Q")


@dataclass
class IoStats:
    """Distinct blocks read/written during one logical operation."""

    reads: int = 0
    writes: int = 0

    @property
    def total(self) -> int:
        return self.reads + self.writes


def pack_header(params: Params, master_seed: int) -> bytes:
    head = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        params.capacity,
        params.gamma,
        params.beta,
        params.block_size,
        params.table_slots,
        master_seed & ((1 << 64) - 1),
    )
    return head.ljust(HEADER_BYTES, b"\0")


def parse_header(raw: bytes) -> dict:
    magic, version, capacity, gamma, beta, block_size, table_slots, seed = (
        _HEADER.unpack_from(raw)
    )
    if magic != MAGIC:
        raise ValueError("not a B-skip-list store (bad magic)")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    return {
        "capacity": capacity,
        "gamma": gamma,
        "beta": beta,
        "block_size": block_size,
        "table_slots": table_slots,
        "master_seed": seed,
    }


class SlotStore:
    """p slots of 10 bytes each over a mutable buffer, with per-operation
    distinct-block I/O accounting.  Single writer; the accounting state is
    not thread-safe during a mutation."""

    def __init__(self, table_slots: int, block_size: int, buf, base: int = 0,
                 mmap_obj=None, fileobj=None):
        self.table_slots = table_slots
        self.block_size = block_size
        self._buf = buf
        self._base = base
        self._mmap = mmap_obj
        self._file = fileobj
        self._in_op = False
        self._read_blocks: set[int] = set()
        self._write_blocks: set[int] = set()
        self.last_op = IoStats()

    # -- construction -----------------------------------------------------

    @classmethod
    def in_memory(cls, table_slots: int, block_size: int) -> "SlotStore":
        return cls(table_slots, block_size, bytearray(table_slots * SLOT_BYTES))

    @classmethod
    def create_file(cls, path, params: Params, master_seed: int) -> "SlotStore":
        size = HEADER_BYTES + params.table_slots * SLOT_BYTES
        f = open(path, "w+b")
        f.write(pack_header(params, master_seed))
        f.truncate(size)
        f.flush()
        m = mmap.mmap(f.fileno(), size)
        return cls(params.table_slots, params.block_size, m,
                   base=HEADER_BYTES, mmap_obj=m, fileobj=f)

    @classmethod
    def open_file(cls, path) -> tuple["SlotStore", dict]:
        f = open(path, "r+b")
        header = parse_header(f.read(HEADER_BYTES))
        size = HEADER_BYTES + header["table_slots"] * SLOT_BYTES
        if os.fstat(f.fileno()).st_size != size:
            f.close()
            raise ValueError("store file truncated or oversized")
        m = mmap.mmap(f.fileno(), size)
        store = cls(header["table_slots"], header["block_size"], m,
                    base=HEADER_BYTES, mmap_obj=m, fileobj=f)
        return store, header

    def flush(self):
        if self._mmap is not None:
            self._mmap.flush()

    def close(self):
        if self._mmap is not None:
            self._mmap.flush()
            self._mmap.close()
            self._mmap = None
        if self._file is not None:
            self._file.close()
            self._file = None

    # -- I/O accounting ----------------------------------------------------

    def begin_op(self):
        if self._in_op:
            raise RuntimeError("logical operation already in progress")
        self._in_op = True
        self._read_blocks.clear()
        self._write_blocks.clear()

    def end_op(self) -> IoStats:
        if not self._in_op:
            raise RuntimeError("no logical operation in progress")
        self._in_op = False
        self.last_op = IoStats(len(self._read_blocks), len(self._write_blocks))
        return self.last_op

    @contextmanager
    def operation(self):
        self.begin_op()
        stats = IoStats()
        try:
            yield stats
        finally:
            done = self.end_op()
            stats.reads = done.reads
            stats.writes = done.writes

    def block_of(self, slot: int) -> int:
        return slot // self.block_size

    def _touch(self, blocks: set[int], start: int, count: int):
        b = self.block_size
        end = start + count
        if end <= self.table_slots:
            blocks.update(range(start // b, (end - 1) // b + 1))
        else:
            blocks.update(range(start // b, (self.table_slots - 1) // b + 1))
            wrapped = end - self.table_slots
            blocks.update(range(0, (wrapped - 1) // b + 1))

    # -- slot access --------------------------------------------------------

    def _check(self, slot: int):
        if not 0 <= slot < self.table_slots:
            raise IndexError(f"slot {slot} out of range [0, {self.table_slots})")

    def read_slot(self, slot: int) -> tuple[int, int, int]:
        self._check(slot)
        if self._in_op:
            self._read_blocks.add(slot // self.block_size)
        return _SLOT.unpack_from(self._buf, self._base + slot * SLOT_BYTES)

    def write_slot(self, slot: int, tag: int, element: int = 0, level: int = 0):
        self._check(slot)
        if tag != TAG_NODE:
            element = 0  # canonical zeroing for EMPTY and END
            level = 0
        if self._in_op:
            self._write_blocks.add(slot // self.block_size)
        _SLOT.pack_into(self._buf, self._base + slot * SLOT_BYTES,
                        tag, element, level)

    def read_run(self, start: int, count: int) -> list[tuple[int, int, int]]:
        """Read count slots starting at start, wrapping cyclically; a
        wrapped run charges the blocks of both pieces."""
        self._check(start)
        if count < 0 or count > self.table_slots:
            raise IndexError(f"bad run length {count}")
        if count == 0:
            return []
        if self._in_op:
            self._touch(self._read_blocks, start, count)
        p = self.table_slots
        first = min(count, p - start)
        a = self._base + start * SLOT_BYTES
        out = list(_SLOT.iter_unpack(memoryview(self._buf)[a:a + first * SLOT_BYTES]))
        if first < count:
            b = self._base
            out += list(_SLOT.iter_unpack(
                memoryview(self._buf)[b:b + (count - first) * SLOT_BYTES]))
        return out

    def read_to_block_end(self, start: int) -> list[tuple[int, int, int]]:
        """Slots from start through the end of its block (clamped at p).
        Costs one block, the natural scan granularity."""
        self._check(start)
        n = min(self.block_size - start % self.block_size,
                self.table_slots - start)
        return self.read_run(start, n)

    def write_run(self, start: int, slots) -> None:
        """Write consecutive slots starting at start, wrapping cyclically."""
        self._check(start)
        count = len(slots)
        if count > self.table_slots:
            raise IndexError(f"bad run length {count}")
        if count == 0:
            return
        if self._in_op:
            self._touch(self._write_blocks, start, count)
        pack = _SLOT.pack
        data = b"".join(
            pack(t, e, l) if t == TAG_NODE else pack(t, 0, 0)
            for t, e, l in slots
        )
        p = self.table_slots
        first = min(count, p - start)
        a = self._base + start * SLOT_BYTES
        self._buf[a:a + first * SLOT_BYTES] = data[:first * SLOT_BYTES]
        if first < count:
            b = self._base
            self._buf[b:b + (count - first) * SLOT_BYTES] = data[first * SLOT_BYTES:]

    def fill_empty(self, start: int, count: int) -> None:
        """Zero count slots starting at start (cyclic)."""
        self._check(start)
        if count > self.table_slots:
            raise IndexError(f"bad run length {count}")
        if count == 0:
            return
        if self._in_op:
            self._touch(self._write_blocks, start, count)
        p = self.table_slots
        first = min(count, p - start)
        a = self._base + start * SLOT_BYTES
        self._buf[a:a + first * SLOT_BYTES] = bytes(first * SLOT_BYTES)
        if first < count:
            b = self._base
            self._buf[b:b + (count - first) * SLOT_BYTES] = bytes(
                (count - first) * SLOT_BYTES)

    # -- canonical image -----------------------------------------------------

    def image_bytes(self) -> bytes:
        a = self._base
        return bytes(self._buf[a:a + self.table_slots * SLOT_BYTES])

    def image_digest(self) -> bytes:
        """SHA-256 of the full p x 10-byte slot-array image."""
        a = self._base
        h = hashlib.sha256()
        h.update(memoryview(self._buf)[a:a + self.table_slots * SLOT_BYTES])
        return h.digest()
