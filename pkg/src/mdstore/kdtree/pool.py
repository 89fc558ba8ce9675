# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Pre-allocated pool of kd-tree nodes.

Nodes are stored as parallel arrays (struct of arrays) so that the compiled kernels can
address them by integer id. The free list is a deque of id blocks guarded by a lock
held only for O(blocks) bookkeeping, never while building a tree.
"""

import logging
import threading
from collections import deque
from typing import Deque

import numpy as np

from ..constants import NIL
from ..exceptions import PoolConfigurationError, PoolExhaustedError

py_logger = logging.getLogger(__name__)

# Free blocks are merged once the deque grows past this length
_MAX_FREE_BLOCKS = 1024


class NodePool:
    """Fixed-capacity store of kd-tree nodes shared by all ingestion tasks."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise PoolConfigurationError(f"Node pool capacity must be >= 1, got {capacity}")
        try:
            self.record_ref = np.zeros(capacity, dtype=np.int64)
            self.left = np.full(capacity, NIL, dtype=np.int64)
            self.right = np.full(capacity, NIL, dtype=np.int64)
            self.parent = np.full(capacity, NIL, dtype=np.int64)
            self.count = np.zeros(capacity, dtype=np.int64)
            free_ids = np.arange(capacity, dtype=np.int64)
        except MemoryError as exc:
            raise PoolConfigurationError(
                f"Cannot allocate a node pool of {capacity} nodes"
            ) from exc
        self._capacity = capacity
        self._free: Deque[np.ndarray] = deque([free_ids])
        self._free_count = capacity
        self._lock = threading.Lock()
        py_logger.debug(f"Node pool created with {capacity} nodes")

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def free_count(self) -> int:
        return self._free_count

    @property
    def acquired_count(self) -> int:
        return self._capacity - self._free_count

    def acquire_many(self, n: int) -> np.ndarray:
        """Take ``n`` node ids out of the pool.

        Raises:
            PoolExhaustedError: when fewer than ``n`` nodes are free.
        """
        if n < 0:
            raise ValueError(f"Cannot acquire {n} nodes")
        if n == 0:
            return np.empty(0, dtype=np.int64)
        with self._lock:
            if n > self._free_count:
                raise PoolExhaustedError(
                    f"Node pool exhausted: requested {n} nodes, {self._free_count} of "
                    f"{self._capacity} free"
                )
            parts = []
            needed = n
            while needed:
                block = self._free.pop()
                if len(block) > needed:
                    self._free.append(block[:-needed])
                    block = block[-needed:]
                parts.append(block)
                needed -= len(block)
            self._free_count -= n
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def acquire(self) -> int:
        return int(self.acquire_many(1)[0])

    def release_many(self, node_ids: np.ndarray) -> None:
        """Return node ids to the pool."""
        if len(node_ids) == 0:
            return
        block = np.array(node_ids, dtype=np.int64, copy=True)
        with self._lock:
            if self._free_count + len(block) > self._capacity:
                raise PoolConfigurationError(
                    f"Releasing {len(block)} nodes would exceed the pool capacity "
                    f"({self._free_count} of {self._capacity} already free)"
                )
            self._free.append(block)
            self._free_count += len(block)
            if len(self._free) > _MAX_FREE_BLOCKS:
                self._free = deque([np.concatenate(list(self._free))])

    def release(self, node_id: int) -> None:
        self.release_many(np.array([node_id], dtype=np.int64))


def pool_create(max_chunk_records: int, max_ingestor_threads: int) -> NodePool:
    """Dimension a pool for the worst case: one full chunk per ingestor thread."""
    if max_chunk_records < 1 or max_ingestor_threads < 1:
        raise PoolConfigurationError(
            "max_chunk_records and max_ingestor_threads must both be >= 1, got "
            f"{max_chunk_records} and {max_ingestor_threads}"
        )
    return NodePool(max_chunk_records * max_ingestor_threads)
