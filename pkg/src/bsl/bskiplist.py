"""The B-skip-list: a uniquely represented ordered set in external memory.

Elements are 64-bit unsigned keys (>= 1; key 0 is the front sentinel).
Every element x appears once per level 1..level_of(x); each level's list
is partitioned at the elements of the level above, and each partition is
stored through the allocator under the label (min element, level).  For
fixed (params, master seed) the slot-array image is a pure function of
the stored element set.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right, insort
from typing import Iterator, NamedTuple

from .allocator import Allocator, CapacityError, PartitionLabel, StoredString
from .blockstore import IoStats, SlotStore, parse_header
from .hashing import FRONT_KEY, MAX_KEY, HashSeeds, Params, level_of

FRONT = FRONT_KEY


class PathEntry(NamedTuple):
    level: int
    label: PartitionLabel
    predecessor: int


def _check_key(y: int):
    if not 1 <= y <= MAX_KEY:
        raise ValueError(f"element key must be in [1, 2^64); got {y}")


def partitions_for_set(elements, seeds: HashSeeds, params: Params,
                       levels: dict[int, int] | None = None
                       ) -> dict[tuple[int, int], tuple[int, ...]]:
    """From-scratch partitioner: the exact string set a structure holding
    `elements` must store, computed directly from the level function.
    Used as the content oracle and by the invariant checker."""
    if levels is None:
        levels = {}
    for x in elements:
        if x not in levels:
            levels[x] = level_of(x, seeds, params)
    ordered = sorted(elements)
    out: dict[tuple[int, int], tuple[int, ...]] = {}
    beta = params.beta
    chain = [FRONT] + ordered
    lvl = [beta] + [levels[x] for x in ordered]
    for k in range(1, beta + 1):
        head = None
        run: list[int] = []
        for x, l in zip(chain, lvl):
            if l < k:
                continue
            if x == FRONT or l > k:
                if head is not None:
                    out[(head, k)] = tuple(run)
                head = x
                run = [x]
            else:
                run.append(x)
        out[(head, k)] = tuple(run)
    return out


class BSkipList:
    """Ordered set of 64-bit keys with canonical external-memory layout.

    Single writer; lookups and range queries may run concurrently only
    while no mutation is in flight.
    """

    def __init__(self, params: Params, seeds: HashSeeds, store: SlotStore,
                 master_seed: int, allocator: Allocator,
                 element_count: int, node_count: int):
        self.params = params
        self.seeds = seeds
        self.store = store
        self.master_seed = master_seed
        self.alloc = allocator
        self._element_count = element_count
        self._node_count = node_count

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, params: Params, master_seed: int,
               path=None) -> "BSkipList":
        """Fresh structure holding only the front sentinel, on an
        in-memory store or a newly created file at `path`."""
        seeds = HashSeeds.from_master(master_seed)
        if path is None:
            store = SlotStore.in_memory(params.table_slots, params.block_size)
        else:
            store = SlotStore.create_file(path, params, master_seed)
        alloc = Allocator(store, seeds, params)
        if alloc.occupied_slots or any(True for _ in alloc._iter_table()):
            raise ValueError("store is not empty")
        node_count = 0
        with store.operation():
            for k in range(1, params.beta + 1):
                alloc.insert((FRONT, k), (FRONT,))
                node_count += 1
        return cls(params, seeds, store, master_seed, alloc, 0, node_count)

    @classmethod
    def open(cls, path, master_seed: int, alpha_max: float = 0.9) -> "BSkipList":
        """Reopen a file-backed structure; the seed must match the header."""
        store, header = SlotStore.open_file(path)
        if header["master_seed"] != master_seed & ((1 << 64) - 1):
            store.close()
            raise ValueError("master seed does not match the store header")
        params = Params(header["capacity"], header["gamma"],
                        header["block_size"], header["table_slots"], alpha_max)
        if params.beta != header["beta"]:
            store.close()
            raise ValueError("header beta inconsistent with parameters")
        seeds = HashSeeds.from_master(master_seed)
        alloc = Allocator.attach(store, seeds, params)
        node_count = 0
        element_count = 0
        front_levels = set()
        for _, label, payload in alloc._iter_table():
            node_count += len(payload)
            if label[0] == FRONT:
                front_levels.add(label[1])
            if label[1] == 1:
                element_count += sum(1 for e in payload if e != FRONT)
        if front_levels != set(range(1, params.beta + 1)):
            raise ValueError("store lacks the front partitions; not a "
                             "B-skip-list image")
        return cls(params, seeds, store, master_seed, alloc,
                   element_count, node_count)

    def close(self):
        self.store.close()

    # -- accessors -----------------------------------------------------------

    def element_count(self) -> int:
        return self._element_count

    def node_count(self) -> int:
        """Total stored nodes: sum of level_of(x) over elements, plus the
        beta front nodes."""
        return self._node_count

    def digest(self) -> bytes:
        return self.store.image_digest()

    def level_of(self, x: int) -> int:
        return level_of(x, self.seeds, self.params)

    # -- search ---------------------------------------------------------------

    def _descend(self, y: int, strict: bool):
        """Per level beta..1: (level, label, payload, predecessor), doing
        exactly one allocator lookup per level."""
        comp = bisect_left if strict else bisect_right
        label = (FRONT, self.params.beta)
        entries = []
        for k in range(self.params.beta, 0, -1):
            payload, _ = self.alloc.lookup(label)
            if payload is None:
                raise AssertionError(f"partition {label} missing")
            pred = payload[comp(payload, y) - 1]
            entries.append((k, label, payload, pred))
            if k > 1:
                label = (pred, k - 1)
        return entries

    def search_path(self, y: int) -> list[PathEntry]:
        """Entered partition and largest element <= y, per level."""
        _check_key(y)
        with self.store.operation():
            entries = self._descend(y, strict=False)
        return [PathEntry(k, PartitionLabel(*lab), pred)
                for k, lab, _, pred in entries]

    def lookup(self, y: int) -> tuple[bool, IoStats]:
        _check_key(y)
        with self.store.operation() as stats:
            entries = self._descend(y, strict=False)
        found = entries[-1][3] == y
        return found, stats

    # -- mutation ---------------------------------------------------------------

    def insert(self, y: int) -> IoStats:
        """Add y; silently a no-op when already present (the only
        image-preserving choice)."""
        _check_key(y)
        lvl = level_of(y, self.seeds, self.params)
        with self.store.operation() as stats:
            entries = self._descend(y, strict=True)
            by_level = {k: (lab, pay) for k, lab, pay, _ in entries}
            label_l, payload_l = by_level[lvl]
            idx = bisect_left(payload_l, y)
            if idx < len(payload_l) and payload_l[idx] == y:
                return stats  # already present
            if self._element_count >= self.params.capacity:
                raise CapacityError(
                    f"capacity {self.params.capacity} reached")
            # Splice y into its own-level partition.
            self.alloc.delete(label_l)
            self.alloc.insert(label_l,
                              payload_l[:idx] + (y,) + payload_l[idx:])
            # Split the entered partition at every level below.
            for k in range(lvl - 1, 0, -1):
                label, payload = by_level[k]
                cut = bisect_left(payload, y)
                self.alloc.delete(label)
                self.alloc.insert(label, payload[:cut])
                self.alloc.insert((y, k), (y,) + payload[cut:])
            self._element_count += 1
            self._node_count += lvl
        return stats

    def delete(self, y: int) -> IoStats:
        """Remove y; silently a no-op when absent."""
        _check_key(y)
        lvl = level_of(y, self.seeds, self.params)
        with self.store.operation() as stats:
            entries = self._descend(y, strict=True)
            by_level = {k: (lab, pay) for k, lab, pay, _ in entries}
            label_l, payload_l = by_level[lvl]
            idx = bisect_left(payload_l, y)
            if idx >= len(payload_l) or payload_l[idx] != y:
                return stats  # absent
            # Drop y from its own-level partition (never the head there).
            self.alloc.delete(label_l)
            self.alloc.insert(label_l, payload_l[:idx] + payload_l[idx + 1:])
            # Merge away the partitions y headed at every level below.
            for k in range(lvl - 1, 0, -1):
                left_label, left_payload = by_level[k]
                right_payload, _ = self.alloc.lookup((y, k))
                if right_payload is None:
                    raise AssertionError(f"partition ({y}, {k}) missing")
                self.alloc.delete(left_label)
                self.alloc.delete((y, k))
                self.alloc.insert(left_label,
                                  left_payload + right_payload[1:])
            self._element_count -= 1
            self._node_count -= lvl
        return stats

    # -- range queries -------------------------------------------------------------

    def range_query(self, x: int, y: int) -> tuple[list[int], IoStats]:
        """All stored elements in [x, y], ascending."""
        _check_key(x)
        if y < x:
            raise ValueError("range upper bound below lower bound")
        out: list[int] = []
        with self.store.operation() as stats:
            entries = self._descend(x, strict=True)
            # Cursor per level: [payload, index of current element].
            cursors = {k: [pay, bisect_left(pay, x) - 1]
                       for k, _, pay, _ in entries}

            def advance(k: int):
                """Next element of the level-k list, moving the cursor;
                None when the structure is exhausted."""
                payload, idx = cursors[k]
                if idx + 1 < len(payload):
                    cursors[k][1] = idx + 1
                    return payload[idx + 1]
                if k == self.params.beta:
                    return None
                nxt = advance(k + 1)
                if nxt is None:
                    return None
                pay, _ = self.alloc.lookup((nxt, k))
                if pay is None:
                    raise AssertionError(f"partition ({nxt}, {k}) missing")
                cursors[k] = [pay, 0]
                return nxt

            while True:
                e = advance(1)
                if e is None or e > y:
                    break
                out.append(e)
        return out, stats

    def elements(self) -> list[int]:
        out, _ = self.range_query(1, MAX_KEY)
        return out

    def max_level(self) -> int:
        """Largest level carrying a real element (0 when empty)."""
        best = 0
        for _, label, payload in self.alloc._iter_table():
            if label[0] != FRONT:
                best = max(best, label[1])
            elif len(payload) > 1:
                best = max(best, label[1])
        return best

    # -- verification -----------------------------------------------------------

    def check_invariants(self) -> list[str]:
        """Full-structure audit; returns a list of violations (empty when
        clean)."""
        problems = self.alloc.verify_layout()
        stored = {tuple(s.label): tuple(s.payload) for s in self.alloc.strings()}
        elements = set()
        node_count = 0
        for (head, k), payload in stored.items():
            node_count += len(payload)
            if k == 1:
                elements.update(e for e in payload if e != FRONT)
        expected = partitions_for_set(elements, self.seeds, self.params)
        if stored != expected:
            missing = expected.keys() - stored.keys()
            extra = stored.keys() - expected.keys()
            if missing:
                problems.append(f"missing partitions: {sorted(missing)[:5]}")
            if extra:
                problems.append(f"unexpected partitions: {sorted(extra)[:5]}")
            for lab in expected.keys() & stored.keys():
                if expected[lab] != stored[lab]:
                    problems.append(
                        f"partition {lab}: stored {stored[lab]} "
                        f"!= expected {expected[lab]}")
        for (head, k), payload in stored.items():
            head_level = level_of(head, self.seeds, self.params)
            if head_level < k:
                problems.append(f"partition ({head},{k}): head below level")
            for e in payload[1:]:
                if level_of(e, self.seeds, self.params) != k:
                    problems.append(
                        f"partition ({head},{k}): member {e} not exactly level {k}")
            if head != FRONT and head_level == k and k != self.params.beta:
                problems.append(
                    f"partition ({head},{k}): head should sit in a lower "
                    "partition")
        if len(elements) != self._element_count:
            problems.append(
                f"element count {self._element_count} != stored {len(elements)}")
        if node_count != self._node_count:
            problems.append(
                f"node count {self._node_count} != stored {node_count}")
        return problems
