"""Workload runner and verification harness.

Subcommands:
  run            execute a seeded workload and emit per-op-type I/O rows
  verify-ur      check that different op orders give bit-identical images
  verify-oracle  cross-check random traces against brute-force oracles
  stats          Monte Carlo tail/depth/displacement/I/O measurements with
                 the analytic bounds in adjacent columns

Every command's output is a pure function of its flags and the master
seed (wall-time reporting is off unless --timing is given).
Exit codes: 0 pass, 1 verification failure, 2 usage error, 3 capacity.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from random import Random

from .allocator import Allocator, CapacityError, StoredString, rebuild_canonical
from .blockstore import SlotStore
from .bskiplist import FRONT, BSkipList, partitions_for_set
from .hashing import HashSeeds, Params, level_of, mix64

RUN_COLUMNS = [
    "experiment", "n", "gamma", "block_size", "op",
    "mean_io_blocks", "p95_io_blocks", "node_count", "load",
    "max_level", "wall_time_s",
]

STATS_COLUMNS = [
    "experiment", "kind", "gamma", "block_size", "n", "trial",
    "metric", "empirical", "bound",
]

OP_NAMES = ("insert", "delete", "lookup", "range")


@dataclass
class WorkloadSpec:
    n: int
    ops: int
    mix: tuple[float, float, float, float]
    capacity: int
    gamma: int
    block_size: int
    master_seed: int
    backend: str = "mem"
    path: str | None = None
    table_slots: int | None = None
    experiment: str = "run"
    timing: bool = False

    def __post_init__(self):
        if any(w < 0 for w in self.mix) or sum(self.mix) <= 0:
            raise ValueError("op mix weights must be non-negative, sum > 0")


def _trial_seed(master_seed: int, index: int) -> int:
    return mix64(master_seed + 0x1000 + index)


def _random_keys(rng: Random, count: int, upper: int = 1 << 63) -> list[int]:
    keys: set[int] = set()
    while len(keys) < count:
        keys.add(rng.randrange(1, upper))
    return sorted(keys)


def _make_structure(spec_capacity, gamma, block_size, master_seed,
                    table_slots=None, backend="mem", path=None) -> BSkipList:
    params = Params.create(spec_capacity, gamma, block_size,
                           table_slots=table_slots)
    if backend == "file":
        if path is None:
            raise ValueError("--file is required with --backend file")
        return BSkipList.create(params, master_seed, path=path)
    return BSkipList.create(params, master_seed)


def _percentile(sorted_vals: list[int], frac: float) -> float:
    if not sorted_vals:
        return 0.0
    idx = min(len(sorted_vals) - 1, math.ceil(frac * len(sorted_vals)) - 1)
    return float(sorted_vals[max(idx, 0)])


# ---------------------------------------------------------------- run


def run_workload(spec: WorkloadSpec) -> list[list]:
    """Execute the workload; one aggregate row per op type used."""
    started = time.perf_counter()
    sl = _make_structure(spec.capacity, spec.gamma, spec.block_size,
                         spec.master_seed, spec.table_slots,
                         spec.backend, spec.path)
    rng = Random(spec.master_seed)
    members: list[int] = []
    for key in _random_keys(rng, spec.n):
        sl.insert(key)
        members.append(key)
    members.sort()
    per_op: dict[str, list[int]] = {name: [] for name in OP_NAMES}
    weights = spec.mix
    for _ in range(spec.ops):
        op = rng.choices(OP_NAMES, weights=weights)[0]
        if op == "insert":
            key = rng.randrange(1, 1 << 63)
            stats = sl.insert(key)
            pos = bisect_left(members, key)
            if pos == len(members) or members[pos] != key:
                members.insert(pos, key)
        elif op == "delete":
            if members and rng.random() < 0.8:
                key = members.pop(rng.randrange(len(members)))
            else:
                key = rng.randrange(1, 1 << 63)
                pos = bisect_left(members, key)
                if pos < len(members) and members[pos] == key:
                    members.pop(pos)
            stats = sl.delete(key)
        elif op == "lookup":
            if members and rng.random() < 0.5:
                key = members[rng.randrange(len(members))]
            else:
                key = rng.randrange(1, 1 << 63)
            _, stats = sl.lookup(key)
        else:
            lo = rng.randrange(1, 1 << 63)
            hi = lo + rng.randrange(1, 1 << 20)
            _, stats = sl.range_query(lo, hi)
        per_op[op].append(stats.total)
    node_count = sl.node_count()
    load = sl.alloc.load()
    max_level = sl.max_level()
    wall = time.perf_counter() - started if spec.timing else 0.0
    rows = []
    for op in OP_NAMES:
        samples = sorted(per_op[op])
        if not samples:
            continue
        rows.append([
            spec.experiment, sl.element_count(), spec.gamma, spec.block_size,
            op, f"{sum(samples) / len(samples):.6f}",
            f"{_percentile(samples, 0.95):.6f}", node_count,
            f"{load:.6f}", max_level, f"{wall:.6f}",
        ])
    sl.close()
    return rows


# ---------------------------------------------------------------- verify-ur


def _shuffled_trace(target: list[int], extras: list[int], rng: Random):
    """Insert/delete trace realizing exactly the target set."""
    ops: list[tuple[str, int]] = [("insert", k) for k in target]
    rng.shuffle(ops)
    for e in extras:
        i = rng.randrange(len(ops) + 1)
        ops.insert(i, ("insert", e))
        j = rng.randrange(i + 1, len(ops) + 1)
        ops.insert(j, ("delete", e))
    # Sprinkle duplicate inserts and absent deletes; they must be no-ops.
    for _ in range(len(target) // 10):
        pool = target or extras
        if not pool:
            break
        k = pool[rng.randrange(len(pool))]
        ops.insert(rng.randrange(len(ops) + 1), ("insert", k))
    return ops


def verify_ur(n: int, gamma: int, block_size: int, master_seed: int,
              trials: int, capacity: int | None = None,
              negative_control: bool = False) -> tuple[bool, list[bytes]]:
    """Build the same n-element set via `trials` different operation
    sequences; PASS iff every final image digest is identical."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    key_rng = Random(mix64(master_seed))
    target = _random_keys(key_rng, n)
    extra_pool = []
    extra_count = max(1, min(50, n)) if n else 1
    # The extras may all be live at once mid-trace; leave room for them.
    capacity = capacity or n + extra_count
    params = Params.create(capacity, gamma, block_size)
    while len(extra_pool) < extra_count:
        k = key_rng.randrange(1, 1 << 63)
        if k not in target:
            extra_pool.append(k)
    digests = []
    for t in range(trials):
        struct_seed = _trial_seed(master_seed, t) if negative_control else master_seed
        sl = BSkipList.create(params, struct_seed)
        rng = Random(_trial_seed(master_seed, 10_000 + t))
        extras = [] if t == 0 else extra_pool
        for op, key in _shuffled_trace(list(target), extras, rng):
            if op == "insert":
                sl.insert(key)
            else:
                sl.delete(key)
        digests.append(sl.digest())
    return len(set(digests)) == 1, digests


# ---------------------------------------------------------------- verify-oracle


def _buggy_delete(sl: BSkipList, y: int) -> bool:
    """Fault injection: delete y but skip the partition merges below its
    level.  Returns False when y cannot exercise the fault."""
    lvl = level_of(y, sl.seeds, sl.params)
    if lvl < 2:
        return False
    with sl.store.operation():
        entries = sl._descend(y, strict=True)
        by_level = {k: (lab, pay) for k, lab, pay, _ in entries}
        label_l, payload_l = by_level[lvl]
        idx = bisect_left(payload_l, y)
        if idx >= len(payload_l) or payload_l[idx] != y:
            return False
        sl.alloc.delete(label_l)
        sl.alloc.insert(label_l, payload_l[:idx] + payload_l[idx + 1:])
        sl._element_count -= 1
        sl._node_count -= lvl
    return True


def verify_oracle(n_max: int, ops: int, gamma: int, block_size: int,
                  master_seed: int, check_every: int = 1,
                  inject_fault: bool = False) -> tuple[bool, list[str]]:
    """Random trace cross-checked against a sorted-set oracle, the
    from-scratch partitioner, and the allocator rebuild oracle."""
    problems: list[str] = []
    if n_max == 0 or ops == 0:
        return True, problems
    params = Params.create(n_max, gamma, block_size)
    sl = BSkipList.create(params, master_seed)
    rng = Random(mix64(master_seed ^ 0xACE))
    universe_hi = 3 * n_max + 1
    oracle: set[int] = set()
    levels_cache: dict[int, int] = {}
    faulted = False
    fault_at = ops // 2 if inject_fault else -1
    for i in range(ops):
        roll = rng.random()
        if roll < 0.45 and len(oracle) < n_max:
            key = rng.randrange(1, universe_hi)
            sl.insert(key)
            oracle.add(key)
        elif roll < 0.70:
            key = rng.randrange(1, universe_hi)
            did_fault = False
            if not faulted and i >= fault_at >= 0 and key in oracle:
                did_fault = _buggy_delete(sl, key)
                faulted = did_fault
            if not did_fault:
                sl.delete(key)
            oracle.discard(key)
        elif roll < 0.90:
            key = rng.randrange(1, universe_hi)
            found, _ = sl.lookup(key)
            if found != (key in oracle):
                problems.append(f"op {i}: membership({key}) = {found}")
        else:
            lo = rng.randrange(1, universe_hi)
            hi = lo + rng.randrange(0, n_max)
            got, _ = sl.range_query(lo, hi)
            want = sorted(k for k in oracle if lo <= k <= hi)
            if got != want:
                problems.append(f"op {i}: range [{lo},{hi}] mismatch")
        if (i + 1) % check_every == 0:
            msg = _oracle_checkpoint(sl, oracle, levels_cache)
            if msg:
                problems.append(f"op {i}: {msg}")
        if problems:
            break
    return not problems, problems


def _oracle_checkpoint(sl: BSkipList, oracle: set[int],
                       levels_cache: dict[int, int]) -> str | None:
    expected = partitions_for_set(oracle, sl.seeds, sl.params, levels_cache)
    stored = {tuple(s.label): tuple(s.payload) for s in sl.alloc.strings()}
    if stored != expected:
        return "partitions differ from from-scratch partitioner"
    canon = rebuild_canonical(
        [StoredString(lab, pay) for lab, pay in expected.items()],
        sl.seeds, sl.params)
    if canon.image_digest() != sl.digest():
        return "image differs from rebuild_canonical"
    return None


# ---------------------------------------------------------------- stats


def _partition_sizes(keys: list[int], seeds, params) -> list[int]:
    parts = partitions_for_set(keys, seeds, params)
    return [len(pay) for pay in parts.values()]


def stats_partitions(n: int, gamma: int, block_size: int, master_seed: int,
                     trials: int, experiment: str = "stats") -> list[list]:
    """Empirical partition-size tail vs the exp(-lambda/gamma) bound."""
    params = Params.create(max(n, 1), gamma, block_size)
    lambdas = [gamma, 2 * gamma, 3 * gamma]
    counts = {lam: 0 for lam in lambdas}
    total = 0
    for t in range(trials):
        seeds = HashSeeds.from_master(_trial_seed(master_seed, t))
        rng = Random(_trial_seed(master_seed, 5_000 + t))
        sizes = _partition_sizes(_random_keys(rng, n), seeds, params)
        total += len(sizes)
        for lam in lambdas:
            counts[lam] += sum(1 for s in sizes if s >= lam)
    rows = []
    for lam in lambdas:
        empirical = counts[lam] / total if total else 0.0
        bound = math.exp(-lam / gamma)
        rows.append([experiment, "partitions", gamma, block_size, n, trials,
                     lam, f"{empirical:.8f}", f"{bound:.8f}"])
    return rows


def stats_depth(n: int, gamma: int, block_size: int, master_seed: int,
                trials: int, experiment: str = "stats") -> list[list]:
    """Per-trial max level vs the 2*log_gamma(n) high-probability bound."""
    params = Params.create(max(n, 1), gamma, block_size)
    bound = 2 * math.log(n) / math.log(gamma) if n > 1 else 1.0
    rows = []
    for t in range(trials):
        seeds = HashSeeds.from_master(_trial_seed(master_seed, t))
        rng = Random(_trial_seed(master_seed, 5_000 + t))
        depth = max(level_of(k, seeds, params)
                    for k in _random_keys(rng, n))
        rows.append([experiment, "depth", gamma, block_size, n, t,
                     depth, f"{depth:.1f}", f"{bound:.6f}"])
    return rows


def _geometric_len(rng: Random, gamma: int, cap: int) -> int:
    length = 1
    while length < cap and rng.random() < 1.0 - 1.0 / gamma:
        length += 1
    return length


def build_random_allocator(gamma: int, block_size: int, master_seed: int,
                           target_load: float, table_slots: int,
                           string_count_cap: int = 1 << 30):
    """Allocator filled with geometric(1/gamma)-length strings up to the
    target load; shared helper for displacement and I/O-shape stats."""
    # Capacity is irrelevant for a bare allocator; only the table size,
    # alpha_max, and the level range matter here.
    params = Params.create(2, gamma, block_size, table_slots=table_slots)
    seeds = HashSeeds.from_master(master_seed)
    store = SlotStore.in_memory(table_slots, block_size)
    alloc = Allocator(store, seeds, params)
    rng = Random(mix64(master_seed ^ 0xD15))
    strings = []
    used = set()
    while (alloc.occupied_slots < target_load * table_slots
           and len(strings) < string_count_cap):
        length = _geometric_len(rng, gamma, 4 * gamma)
        base = rng.randrange(1, (1 << 63) - 8 * gamma)
        if base in used:
            continue
        used.add(base)
        level = rng.randrange(1, params.beta + 1)
        payload = tuple(range(base, base + length))
        if alloc.occupied_slots + length + 1 > target_load * table_slots:
            break
        alloc.insert((base, level), payload)
        strings.append(((base, level), payload))
    return alloc, strings, params, seeds


def stats_displacement(gamma: int, block_size: int, master_seed: int,
                       table_slots: int = 100_003,
                       target_load: float = 0.5,
                       experiment: str = "stats") -> list[list]:
    alloc, strings, params, _ = build_random_allocator(
        gamma, block_size, master_seed, target_load, table_slots)
    d = alloc.displacement_stats()
    lengths = [len(pay) + 1 for _, pay in strings]
    mean_len = sum(lengths) / len(lengths)
    shape = sum(l * l for l in lengths) / sum(lengths)
    rows = [
        [experiment, "displacement", gamma, block_size, len(strings), 0,
         "mean", f"{d.mean:.6f}", f"{4 * mean_len:.6f}"],
        [experiment, "displacement", gamma, block_size, len(strings), 0,
         "max", d.max, f"{shape:.6f}"],
    ]
    return rows


def io_bound(block_size: int, capacity: int) -> float:
    """Expected-lookup-blocks bound from the analysis: for gamma = B the
    per-level constant is e^2/(e-1), times the level count."""
    levels = math.ceil(math.log(capacity) / math.log(block_size)) + 2
    return (math.e ** 2 / (math.e - 1)) * levels


def measure_lookup_io(sl: BSkipList, lookups: int, rng: Random) -> list[int]:
    hi = 1 << 63
    samples = []
    for _ in range(lookups):
        _, stats = sl.lookup(rng.randrange(1, hi))
        samples.append(stats.total)
    return samples


def stats_io(n: int, gamma: int, block_size: int, master_seed: int,
             capacity: int | None = None, lookups: int = 10_000,
             experiment: str = "stats") -> list[list]:
    capacity = capacity or max(n, 1)
    params = Params.create(capacity, gamma, block_size)
    sl = BSkipList.create(params, master_seed)
    rng = Random(mix64(master_seed ^ 0x10))
    for key in _random_keys(rng, n):
        sl.insert(key)
    samples = sorted(measure_lookup_io(sl, lookups, rng))
    mean = sum(samples) / len(samples)
    bound = io_bound(block_size, capacity)
    return [[experiment, "io", gamma, block_size, n, 0,
             "mean_lookup_blocks", f"{mean:.6f}", f"{bound:.6f}"]]


# ---------------------------------------------------------------- CLI plumbing


def _write_csv(path, columns, rows):
    if path in (None, "-"):
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
        return
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("BSL_SEED")
    if env is not None:
        return int(env, 0)
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                   help="master seed (fallback: BSL_SEED env var, then 0)")
    p.add_argument("--gamma", type=int, default=16)
    p.add_argument("--block-size", type=int, default=16)
    p.add_argument("--capacity", type=int, default=None)
    p.add_argument("--slots-per-table", type=int, default=None)
    p.add_argument("--csv", default=None, help="output path ('-' = stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bsl", description="B-skip-list workload and verification harness")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a seeded workload, emit I/O rows")
    _add_common(p)
    p.add_argument("--n", type=int, default=0, help="prefill element count")
    p.add_argument("--ops", type=int, default=0, help="measured op count")
    p.add_argument("--mix", default="1,0,0,0",
                   help="insert,delete,lookup,range weights")
    p.add_argument("--backend", choices=("mem", "file"), default="mem")
    p.add_argument("--file", default=None, help="store path for file backend")
    p.add_argument("--timing", action="store_true",
                   help="report wall time (breaks byte-determinism)")
    p.add_argument("--experiment-id", default="run")

    p = sub.add_parser("verify-ur", help="unique-representation check")
    _add_common(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--negative-control", action="store_true",
                   help="use a different structure seed per trial (must FAIL)")

    p = sub.add_parser("verify-oracle", help="oracle-equivalence check")
    _add_common(p)
    p.add_argument("--n", type=int, default=512, help="max element count")
    p.add_argument("--ops", type=int, default=10_000)
    p.add_argument("--check-every", type=int, default=1)
    p.add_argument("--inject-fault", action="store_true",
                   help="skip one merge on purpose (must FAIL)")

    p = sub.add_parser("stats", help="Monte Carlo statistics vs bounds")
    _add_common(p)
    p.add_argument("--kind", required=True,
                   choices=("partitions", "depth", "displacement", "io"))
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--lookups", type=int, default=10_000)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    seed = _seed_from(args)
    try:
        if args.command == "run":
            mix = tuple(float(w) for w in args.mix.split(","))
            if len(mix) != 4:
                print("--mix needs four weights", file=sys.stderr)
                return 2
            spec = WorkloadSpec(
                n=args.n, ops=args.ops, mix=mix,
                capacity=args.capacity or max(args.n + args.ops, 1),
                gamma=args.gamma, block_size=args.block_size,
                master_seed=seed, backend=args.backend, path=args.file,
                table_slots=args.slots_per_table,
                experiment=args.experiment_id, timing=args.timing)
            _write_csv(args.csv, RUN_COLUMNS, run_workload(spec))
            return 0
        if args.command == "verify-ur":
            ok, digests = verify_ur(
                args.n, args.gamma, args.block_size, seed, args.trials,
                capacity=args.capacity,
                negative_control=args.negative_control)
            print(f"verify-ur: {'PASS' if ok else 'FAIL'} "
                  f"({len(set(digests))} distinct image(s) over "
                  f"{len(digests)} trials)")
            return 0 if ok else 1
        if args.command == "verify-oracle":
            ok, problems = verify_oracle(
                args.n, args.ops, args.gamma, args.block_size, seed,
                check_every=args.check_every,
                inject_fault=args.inject_fault)
            print(f"verify-oracle: {'PASS' if ok else 'FAIL'}")
            for msg in problems[:10]:
                print(f"  {msg}")
            return 0 if ok else 1
        # stats
        if args.kind == "partitions":
            rows = stats_partitions(args.n, args.gamma, args.block_size,
                                    seed, args.trials)
        elif args.kind == "depth":
            rows = stats_depth(args.n, args.gamma, args.block_size,
                               seed, args.trials)
        elif args.kind == "displacement":
            rows = stats_displacement(args.gamma, args.block_size, seed)
        else:
            rows = stats_io(args.n, args.gamma, args.block_size, seed,
                            capacity=args.capacity, lookups=args.lookups)
        _write_csv(args.csv, STATS_COLUMNS, rows)
        return 0
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
