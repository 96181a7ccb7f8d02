import random

import pytest

from bsl.hashing import FRONT_KEY, HashSeeds, Params, level_of


@pytest.fixture
def small_params():
    return Params.create(1000, 16, 16)


@pytest.fixture
def small_seeds():
    return HashSeeds.from_master(0xDEADBEEF)


def distinct_keys(rng: random.Random, count: int, upper: int = 1 << 63):
    keys = set()
    while len(keys) < count:
        keys.add(rng.randrange(1, upper))
    return sorted(keys)


def reference_predecessors(elements, seeds, params, y, strict=False):
    """Plain (non-blocked) skip-list search oracle: per-level predecessor
    of y computed directly from the level function over sorted lists."""
    levels = {FRONT_KEY: params.beta}
    for x in elements:
        levels[x] = level_of(x, seeds, params)
    chain = [FRONT_KEY] + sorted(elements)
    preds = {}
    for k in range(1, params.beta + 1):
        lk = [x for x in chain if levels[x] >= k]
        if strict:
            preds[k] = max(x for x in lk if x < y)
        else:
            preds[k] = max(x for x in lk if x <= y)
    return preds
