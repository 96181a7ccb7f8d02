"""Uniquely represented variable-length-string allocator.

Each partition is stored as a contiguous (cyclically wrapping) run of NODE
slots followed by one END slot, placed by linear probing from the label's
hash.  Priorities are derived from labels only, so the layout after any
sequence of inserts and deletes is bit-identical to rebuilding the table
from the current string set from scratch.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

from .blockstore import SlotStore, TAG_EMPTY, TAG_END, TAG_NODE
from .hashing import HashSeeds, Params, h1, h2, poly_coeffs


class CapacityError(Exception):
    """Inserting would push the table load past alpha_max."""


class PartitionLabel(NamedTuple):
    element: int
    level: int


class StoredString(NamedTuple):
    label: PartitionLabel
    payload: tuple[int, ...]

    @property
    def length(self) -> int:
        """Slot footprint, counting the END terminator."""
        return len(self.payload) + 1


@dataclass
class DisplacementStats:
    mean: float
    max: int
    histogram: dict[int, int] = field(default_factory=dict)


def _validate_payload(label, payload):
    if not payload:
        raise ValueError("payload must be non-empty")
    if payload[0] != label[0]:
        raise ValueError("payload[0] must equal the label's min element")
    prev = payload[0]
    for e in payload[1:]:
        if e <= prev:
            raise ValueError("payload must be strictly increasing")
        prev = e


class Allocator:
    """Linear-probing string table over a SlotStore.

    The caller owns I/O accounting: wrap calls in store.operation() to
    measure them.  Single writer; concurrent lookups are safe only while
    no mutation is in flight.
    """

    def __init__(self, store: SlotStore, seeds: HashSeeds, params: Params):
        if store.table_slots != params.table_slots:
            raise ValueError("store size does not match params.table_slots")
        self.store = store
        self.seeds = seeds
        self.params = params
        self._coeffs = poly_coeffs(seeds.seed_h2, params.table_slots)
        self._occupied = 0
        self._home_cache: dict[tuple[int, int], int] = {}

    @classmethod
    def attach(cls, store: SlotStore, seeds: HashSeeds, params: Params) -> "Allocator":
        """Bind to a store that already holds strings (e.g. a reopened
        file); recounts occupancy with one pass."""
        alloc = cls(store, seeds, params)
        alloc._occupied = sum(len(pay) + 1 for _, _, pay in alloc._iter_table())
        return alloc

    # -- hashing ------------------------------------------------------------

    def home(self, label) -> int:
        """h2(h1(label)): the slot the label's string probes from."""
        cached = self._home_cache.get(label)
        if cached is None:
            cached = h2(h1(label, self.seeds, self.params),
                        self._coeffs, self.params.table_slots)
            self._home_cache[label] = cached
        return cached

    def priority(self, label) -> tuple[int, int, int]:
        """Total order on labels; lexicographically smaller wins a slot."""
        return (self.home(label), label[0], label[1])

    # -- scanning -----------------------------------------------------------

    def _scan(self, start: int) -> Iterator[tuple[int, tuple[int, int, int]]]:
        """Cyclic slot stream from start, reading a block at a time."""
        p = self.params.table_slots
        store = self.store
        pos = start
        while True:
            for rec in store.read_to_block_end(pos):
                yield pos, rec
                pos += 1
            if pos >= p:
                pos = 0

    def _boundary_before(self, pos: int) -> bool:
        p = self.params.table_slots
        return self.store.read_slot((pos - 1) % p)[0] != TAG_NODE

    def _locate(self, label) -> tuple[int | None, tuple | None, int]:
        """(start, payload, displacement); start is None when absent, in
        which case displacement is the distance to the first empty slot."""
        element, level = label
        start_hash = self.home(label)
        boundary = self._boundary_before(start_hash)
        scan = self._scan(start_hash)
        p = self.params.table_slots
        start = None
        for pos, (tag, elem, lev) in scan:
            if tag == TAG_EMPTY:
                return None, None, (pos - start_hash) % p
            if boundary and tag == TAG_NODE and elem == element and lev == level:
                start = pos
                break
            boundary = tag == TAG_END
        payload = [element]
        for _, (tag, elem, _) in scan:
            if tag == TAG_END:
                break
            payload.append(elem)
        return start, tuple(payload), (start - start_hash) % p

    # -- operations -----------------------------------------------------------

    def lookup(self, label) -> tuple[tuple[int, ...] | None, int]:
        """Payload of the stored string, or None; plus the displacement
        measured during the probe."""
        _, payload, displacement = self._locate(label)
        return payload, displacement

    def insert(self, label, payload) -> None:
        label = tuple(label)
        payload = tuple(payload)
        _validate_payload(label, payload)
        length = len(payload) + 1
        if self._occupied + length > self.params.alpha_max * self.params.table_slots:
            raise CapacityError(
                f"load would exceed alpha_max={self.params.alpha_max}")
        existing, _, _ = self._locate(label)
        if existing is not None:
            raise ValueError(f"label {label} already stored")
        pending = [(self.priority(label), label, payload)]
        while pending:
            _, lab, pay = heapq.heappop(pending)
            self._place(lab, pay, pending)

    def delete(self, label) -> None:
        label = tuple(label)
        start, payload, _ = self._locate(label)
        if start is None:
            raise KeyError(f"label {label} not stored")
        length = len(payload) + 1
        p = self.params.table_slots
        self.store.fill_empty(start, length)
        self._occupied -= length
        # Re-seat the run of strings that follows the freed gap.
        pending: list = []
        scan = self._scan((start + length) % p)
        while True:
            pos, (tag, elem, lev) = next(scan)
            if tag != TAG_NODE:
                break  # first empty slot ends the run
            run_label = (elem, lev)
            run_payload = [elem]
            for _, (t, e, _l) in scan:
                if t == TAG_END:
                    break
                run_payload.append(e)
            run_len = len(run_payload) + 1
            self.store.fill_empty(pos, run_len)
            self._occupied -= run_len
            heapq.heappush(
                pending, (self.priority(run_label), run_label, tuple(run_payload)))
        while pending:
            _, lab, pay = heapq.heappop(pending)
            self._place(lab, pay, pending)

    def _place(self, label, payload, pending) -> None:
        """Write the string at the first slot from its home that is empty
        or starts a strictly lower-priority string, evicting the strings
        whose starts fall inside the written region."""
        length = len(payload) + 1
        prio = (self.home(label), label[0], label[1])
        target = None
        boundary = self._boundary_before(prio[0])
        for pos, (tag, elem, lev) in self._scan(prio[0]):
            if tag == TAG_EMPTY:
                target = pos
                break
            if boundary and tag == TAG_NODE:
                other = (elem, lev)
                if (self.home(other), elem, lev) > prio:
                    target = pos
                    break
            boundary = tag == TAG_END
        # Evict every string starting inside [target, target + length).
        consumed = 0
        scan = self._scan(target)
        while consumed < length:
            pos, (tag, elem, lev) = next(scan)
            consumed += 1
            if tag == TAG_EMPTY:
                continue
            if tag != TAG_NODE:
                raise AssertionError("layout corruption: dangling END slot")
            evict_label = (elem, lev)
            evict_payload = [elem]
            evict_start = pos
            for _, (t, e, _l) in scan:
                consumed += 1
                if t == TAG_END:
                    break
                evict_payload.append(e)
            evict_len = len(evict_payload) + 1
            self.store.fill_empty(evict_start, evict_len)
            self._occupied -= evict_len
            heapq.heappush(
                pending,
                (self.priority(evict_label), evict_label, tuple(evict_payload)))
        level = label[1]
        slots = [(TAG_NODE, e, level) for e in payload]
        slots.append((TAG_END, 0, 0))
        self.store.write_run(target, slots)
        self._occupied += length

    # -- whole-table views ------------------------------------------------------

    def _iter_table(self) -> Iterator[tuple[int, tuple[int, int], tuple[int, ...]]]:
        """(start, label, payload) for every stored string, one pass."""
        p = self.params.table_slots
        store = self.store
        boundary = store.read_slot(p - 1)[0] != TAG_NODE
        open_label = None
        open_start = 0
        open_payload: list[int] = []
        pos = 0
        chunk = 4096
        while pos < p:
            n = min(chunk, p - pos)
            for i, (tag, elem, lev) in enumerate(store.read_run(pos, n)):
                if open_label is not None:
                    if tag == TAG_END:
                        yield open_start, open_label, tuple(open_payload)
                        open_label = None
                        boundary = True
                    else:
                        open_payload.append(elem)
                elif boundary and tag == TAG_NODE:
                    open_label = (elem, lev)
                    open_start = pos + i
                    open_payload = [elem]
                else:
                    boundary = tag != TAG_NODE
            pos += n
        if open_label is not None:
            # String wraps past slot p-1; finish it from slot 0.
            j = 0
            while True:
                t, e, _l = store.read_slot(j)
                if t == TAG_END:
                    break
                open_payload.append(e)
                j += 1
            yield open_start, open_label, tuple(open_payload)

    def strings(self) -> list[StoredString]:
        return [
            StoredString(PartitionLabel(*label), payload)
            for _, label, payload in self._iter_table()
        ]

    def load(self) -> float:
        return self._occupied / self.params.table_slots

    @property
    def occupied_slots(self) -> int:
        return self._occupied

    def displacement_stats(self) -> DisplacementStats:
        p = self.params.table_slots
        hist: dict[int, int] = {}
        total = 0
        worst = 0
        count = 0
        for start, label, _ in self._iter_table():
            d = (start - self.home(label)) % p
            hist[d] = hist.get(d, 0) + 1
            total += d
            worst = max(worst, d)
            count += 1
        mean = total / count if count else 0.0
        return DisplacementStats(mean=mean, max=worst, histogram=hist)

    def verify_layout(self) -> list[str]:
        """Check the stored-string layout invariants; returns violations."""
        problems = []
        p = self.params.table_slots
        store = self.store
        covered = 0
        seen = set()
        for start, label, payload in self._iter_table():
            covered += len(payload) + 1
            if label in seen:
                problems.append(f"duplicate string for label {label}")
            seen.add(label)
            if payload[0] != label[0]:
                problems.append(f"{label}: head {payload[0]} != min element")
            if any(a >= b for a, b in zip(payload, payload[1:])):
                problems.append(f"{label}: payload not strictly increasing")
            pred = store.read_slot((start - 1) % p)[0]
            if pred == TAG_NODE:
                problems.append(f"{label}: not preceded by END or EMPTY")
            gap = (start - self.home(label)) % p
            if gap and any(
                tag == TAG_EMPTY for tag, _, _ in
                self.store.read_run(self.home(label), gap)
            ):
                problems.append(f"{label}: empty slot between home and start")
            found, found_payload, _ = self._locate(label)
            if found != start or found_payload != payload:
                problems.append(f"{label}: probe does not find the string")
        nonempty = 0
        pos = 0
        while pos < p:
            n = min(4096, p - pos)
            nonempty += sum(
                1 for tag, _, _ in store.read_run(pos, n) if tag != TAG_EMPTY)
            pos += n
        if nonempty != covered:
            problems.append(
                f"orphan slots: {nonempty} non-empty vs {covered} in strings")
        if covered != self._occupied:
            problems.append(
                f"occupancy counter {self._occupied} != scanned {covered}")
        return problems


def rebuild_canonical(strings, seeds: HashSeeds, params: Params,
                      block_size: int | None = None) -> SlotStore:
    """Deterministic from-scratch construction: place every string in
    priority order with the alloc_insert placement rule.  The canonical
    layout oracle for the incremental operations."""
    store = SlotStore.in_memory(params.table_slots,
                                block_size or params.block_size)
    alloc = Allocator(store, seeds, params)
    total = 0
    pending = []
    for s in strings:
        label = tuple(s.label) if isinstance(s, StoredString) else tuple(s[0])
        payload = tuple(s.payload) if isinstance(s, StoredString) else tuple(s[1])
        _validate_payload(label, payload)
        total += len(payload) + 1
        pending.append((alloc.priority(label), label, payload))
    if total > params.alpha_max * params.table_slots:
        raise CapacityError("string set exceeds alpha_max load")
    heapq.heapify(pending)
    while pending:
        _, label, payload = heapq.heappop(pending)
        alloc._place(label, payload, pending)
    return store
