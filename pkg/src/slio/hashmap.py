"""Robin Hood open-addressing table keyed by 63-bit Morton codes.

Linear probing with displacement balancing, keyed directly by the Morton
code through a splitmix64-style mixing finalizer, power-of-two capacity,
load factor capped at 0.75. Values are int64 payload row indices owned by
the caller. Probing loops run in the active kernel backend; this wrapper
owns only the growth policy.
"""
from __future__ import annotations

import numpy as np

from . import kernels

EMPTY = kernels.EMPTY
MAX_LOAD = 0.75
_MIN_CAPACITY = 64


def _capacity_for(n: int) -> int:
    cap = _MIN_CAPACITY
    while cap * MAX_LOAD < n:
        cap <<= 1
    return cap


class CodeTable:
    """Morton code -> payload row index."""

    __slots__ = ("keys", "vals", "count")

    def __init__(self, capacity: int = _MIN_CAPACITY):
        cap = _capacity_for(int(capacity * MAX_LOAD))
        self.keys = np.full(cap, EMPTY, dtype=np.uint64)
        self.vals = np.full(cap, -1, dtype=np.int64)
        self.count = 0

    @property
    def capacity(self) -> int:
        return self.keys.shape[0]

    @property
    def load(self) -> float:
        return self.count / self.capacity

    def reserve(self, incoming: int) -> None:
        """Grow so that `incoming` additional entries keep load <= 0.75."""
        need = self.count + incoming
        if need <= self.capacity * MAX_LOAD:
            return
        cap = _capacity_for(need)
        keys = np.full(cap, EMPTY, dtype=np.uint64)
        vals = np.full(cap, -1, dtype=np.int64)
        kernels.table_rehash(self.keys, self.vals, keys, vals)
        self.keys = keys
        self.vals = vals

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        """Payload rows for codes; -1 where absent."""
        return kernels.table_lookup(self.keys, self.vals, codes)

    def upsert(self, codes: np.ndarray, next_val: int) -> tuple[np.ndarray, int]:
        """Insert-or-find; caller must have reserve()d headroom first."""
        rows, n_new = kernels.table_upsert(self.keys, self.vals, codes, next_val)
        self.count += n_new
        return rows, n_new

    def clear(self) -> None:
        self.keys.fill(EMPTY)
        self.vals.fill(-1)
        self.count = 0

    def probe_lengths(self) -> np.ndarray:
        """Displacement of each occupied slot from its home (diagnostics)."""
        return kernels.table_probe_lengths(self.keys)

    def occupied(self) -> tuple[np.ndarray, np.ndarray]:
        """All (code, val) pairs in slot order."""
        mask = self.keys != EMPTY
        return self.keys[mask], self.vals[mask]
