"""B-skip-list: a uniquely represented ordered map for external memory."""

from .allocator import Allocator, CapacityError, PartitionLabel, StoredString, rebuild_canonical
from .blockstore import IoStats, SlotStore
from .bskiplist import FRONT, BSkipList, partitions_for_set
from .hashing import HashSeeds, Params, label_hash, level_of

__all__ = [
    "Allocator",
    "BSkipList",
    "CapacityError",
    "FRONT",
    "HashSeeds",
    "IoStats",
    "Params",
    "PartitionLabel",
    "SlotStore",
    "StoredString",
    "label_hash",
    "level_of",
    "partitions_for_set",
    "rebuild_canonical",
]
