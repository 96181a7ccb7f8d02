"""Acceptance gate: one test per published claim, with pinned tolerances.

Each test prints a single `[criterion N] PASS|FAIL` line.  Statistical
criteria use fixed seeds so the suite is deterministic.
"""

import math
import time
from random import Random

import pytest

from bsl.allocator import Allocator, PartitionLabel, StoredString, rebuild_canonical
from bsl.blockstore import SlotStore
from bsl.bskiplist import BSkipList, partitions_for_set
from bsl.cli import (
    _geometric_len,
    _random_keys,
    build_random_allocator,
    measure_lookup_io,
    verify_oracle,
    verify_ur,
)
from bsl.hashing import HashSeeds, Params, level_of, mix64

LOOKUP_CONSTANT = 4.31  # pinned bound constant, ~e^2/(e-1) per level


def report(criterion: int, ok: bool, detail: str):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def build_list(capacity, gamma, block, seed, n, key_seed=None):
    sl = BSkipList.create(Params.create(capacity, gamma, block), seed)
    rng = Random(mix64(seed if key_seed is None else key_seed))
    for k in _random_keys(rng, n):
        sl.insert(k)
    return sl, rng


def test_criterion_01_unique_representation():
    started = time.monotonic()
    ok, digests = verify_ur(n=1000, gamma=16, block_size=16,
                            master_seed=0xACCE97, trials=100)
    elapsed = time.monotonic() - started
    distinct = len(set(digests))
    report(1, ok and elapsed < 60,
           f"{distinct} distinct image(s) over 100 trials in {elapsed:.1f}s")


def test_criterion_02_oracle_equivalence():
    started = time.monotonic()
    ok, problems = verify_oracle(n_max=512, ops=10_000, gamma=16,
                                 block_size=16, master_seed=0xACCE97,
                                 check_every=1)
    elapsed = time.monotonic() - started
    report(2, ok and elapsed < 60,
           f"{len(problems)} mismatches over 10^4 ops "
           f"(checked after every op) in {elapsed:.1f}s")


def test_criterion_03_allocator_canonicity():
    params = Params.create(2, 16, 16, table_slots=10_007)
    seeds = HashSeeds.from_master(0xACCE97)
    alloc = Allocator(SlotStore.in_memory(10_007, 16), seeds, params)
    rng = Random(mix64(0xACCE97))
    live: dict = {}
    mismatches = 0
    layout_issues = 0
    for step in range(10_000):
        grow = rng.random() < 0.55 and alloc.load() < 0.6
        if grow or not live:
            head = rng.randrange(1, 1 << 48)
            level = rng.randrange(1, params.beta + 1)
            if (head, level) in live:
                continue
            length = _geometric_len(rng, 16, 64)
            payload = tuple(range(head, head + length))
            alloc.insert((head, level), payload)
            live[(head, level)] = payload
        else:
            label = rng.choice(list(live))
            alloc.delete(label)
            del live[label]
        if (step + 1) % 100 == 0:
            canon = rebuild_canonical(
                [StoredString(PartitionLabel(*lab), pay)
                 for lab, pay in live.items()], seeds, params)
            if canon.image_digest() != alloc.store.image_digest():
                mismatches += 1
            layout_issues += len(alloc.verify_layout())
    report(3, mismatches == 0 and layout_issues == 0,
           f"{mismatches} image mismatches, {layout_issues} layout "
           f"violations over 100 checkpoints (10^4 ops)")


@pytest.fixture(scope="module")
def partition_tail_counts():
    gamma, n, trials = 16, 100_000, 20
    params = Params.create(n, gamma, 16)
    lambdas = (16, 32, 48)
    counts = {lam: 0 for lam in lambdas}
    total = 0
    for t in range(trials):
        seeds = HashSeeds.from_master(mix64(0xACCE97 + t))
        rng = Random(mix64(7_000 + t))
        sizes = [len(pay) for pay in
                 partitions_for_set(_random_keys(rng, n), seeds, params
                                    ).values()]
        total += len(sizes)
        for lam in lambdas:
            counts[lam] += sum(1 for s in sizes if s >= lam)
    return counts, total


@pytest.mark.parametrize("lam", [16, 32, 48])
def test_criterion_04_partition_size_tail(partition_tail_counts, lam):
    gamma = 16
    counts, total = partition_tail_counts
    bound = math.exp(-lam / gamma)
    sigma = math.sqrt(bound * (1 - bound) / total)
    empirical = counts[lam] / total
    report(4, empirical <= bound + 4 * sigma,
           f"lam={lam}: tail {empirical:.5f} vs {bound:.5f} + 4sigma "
           f"({4 * sigma:.5f}) over {total} partitions")


def test_criterion_05_lookup_io():
    started = time.monotonic()
    capacity = 1 << 20
    ok = True
    parts = []
    for b in (16, 64):
        bound = LOOKUP_CONSTANT * (math.ceil(math.log(capacity, b)) + 2)
        means = []
        for n in (10**3, 10**4, 10**5):
            sl, rng = build_list(capacity, b, b, 0xACCE97, n,
                                 key_seed=0xACCE97 ^ n)
            samples = measure_lookup_io(sl, 10_000, rng)
            means.append(sum(samples) / len(samples))
        within = all(m <= bound for m in means)
        monotone = means[0] <= means[1] <= means[2]
        # Sub-linear in log n: end-to-end growth below log(1e5)/log(1e3).
        sublinear = means[2] / means[0] <= math.log(10**5) / math.log(10**3)
        ok &= within and monotone and sublinear
        parts.append(f"B={b}: means={['%.2f' % m for m in means]} "
                     f"bound={bound:.2f} monotone={monotone} "
                     f"sublinear={sublinear}")
    elapsed = time.monotonic() - started
    report(5, ok and elapsed < 300, "; ".join(parts) + f" ({elapsed:.0f}s)")


@pytest.mark.parametrize("k", [10, 100, 1000])
def test_criterion_06_range_query_io(k):
    n, b = 10_000, 16
    sl, rng = build_list(n, 16, b, 0xACCE97, n)
    elems = sl.elements()
    bound = LOOKUP_CONSTANT * (math.ceil(math.log(n, b)) + 2) + k / b + 2
    samples = []
    for _ in range(25):
        i = rng.randrange(0, len(elems) - k)
        got, stats = sl.range_query(elems[i], elems[i + k - 1])
        assert len(got) == k
        samples.append(stats.total)
    mean = sum(samples) / len(samples)
    report(6, mean <= bound,
           f"k={k}: mean {mean:.1f} blocks vs bound {bound:.1f}")


def test_criterion_07_space_bound():
    gamma, n, trials = 16, 100_000, 20
    params = Params.create(n, gamma, 16)
    limit = n * gamma / (gamma - 1) + 5 * math.sqrt(n * math.log(n))
    worst_nodes = 0
    worst_load = 0.0
    ok = True
    for t in range(trials):
        seeds = HashSeeds.from_master(mix64(0x50ACE + t))
        rng = Random(mix64(9_000 + t))
        levels = [level_of(x, seeds, params) for x in _random_keys(rng, n)]
        nodes = sum(levels)  # node_count minus the beta front nodes
        # Slot footprint: every node, one END per partition, front nodes.
        strings = params.beta + sum(l - 1 for l in levels) + params.beta
        load = (nodes + params.beta + strings) / params.table_slots
        worst_nodes = max(worst_nodes, nodes)
        worst_load = max(worst_load, load)
        ok &= nodes <= limit and load <= params.alpha_max
    report(7, ok,
           f"max nodes {worst_nodes} <= {limit:.0f}; "
           f"max load {worst_load:.3f} <= {params.alpha_max}")


def test_criterion_08_depth_bound():
    gamma, n, trials = 16, 10_000, 200
    # Generous capacity so the hard cap beta sits above the soft bound.
    params = Params.create(1 << 30, gamma, 16)
    soft = 2 * math.log(n, gamma) + 1
    within_soft = 0
    capped = True
    for t in range(trials):
        seeds = HashSeeds.from_master(mix64(0xDEE9 + t))
        rng = Random(mix64(11_000 + t))
        depth = max(level_of(x, seeds, params) for x in _random_keys(rng, n))
        within_soft += depth <= soft
        capped &= depth <= params.beta
    report(8, within_soft >= 195 and capped,
           f"depth <= {soft:.2f} in {within_soft}/200 trials (need 195); "
           f"hard cap beta={params.beta} held: {capped}")


def test_criterion_09_allocator_io_shape():
    gamma = 16
    ratios = {}
    for b in (16, 64, 256):
        alloc, strings, params, _ = build_random_allocator(
            gamma, b, 0xACCE97, target_load=0.5, table_slots=20_011)
        mean_len = sum(len(pay) + 1 for _, pay in strings) / len(strings)
        rng = Random(mix64(0xACCE97 ^ b))
        samples = []
        for _ in range(300):
            label, payload = strings[rng.randrange(len(strings))]
            if rng.random() < 0.5:
                with alloc.store.operation() as st:
                    alloc.lookup(label)
                samples.append(st.total)
            else:
                with alloc.store.operation() as st:
                    alloc.delete(label)
                samples.append(st.total)
                with alloc.store.operation() as st:
                    alloc.insert(label, payload)
                samples.append(st.total)
        mean_io = sum(samples) / len(samples)
        ratios[b] = mean_io / (mean_len / b + 1)
    ok = (all(r <= 6 for r in ratios.values())
          and max(ratios.values()) < 2 * min(ratios.values()))
    report(9, ok,
           "mean I/O over (len/B + 1): "
           + ", ".join(f"B={b}: {r:.2f}" for b, r in ratios.items()))


def test_criterion_10_idempotence_and_round_trip():
    sl, rng = build_list(2100, 16, 16, 0xACCE97, 1000)
    base = set(sl.elements())
    d0 = sl.digest()
    failures = 0
    probes = 0
    while probes < 1000:
        x = rng.randrange(1, 1 << 63)
        if x in base:
            continue
        probes += 1
        sl.insert(x)
        sl.delete(x)
        if sl.digest() != d0:
            failures += 1
    for x in list(base)[:100]:
        sl.insert(x)  # duplicate insert
    sl_absent = rng.randrange(1, 1 << 63)
    if sl_absent not in base:
        sl.delete(sl_absent)  # absent delete
    failures += sl.digest() != d0
    report(10, failures == 0,
           f"{failures} digest deviations over 10^3 insert/delete round "
           f"trips plus duplicate-op checks")
