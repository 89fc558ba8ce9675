# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Segment cache with queue-based generalized CLOCK replacement.

Entries sit in a FIFO queue that plays the role of the clock face: the hand is its
head. Every entry carries a saturating counter bumped on hits. Eviction pops the head;
an entry with a positive counter is decremented and requeued, an entry still in use by
a query is requeued, and the first unused entry with a zero counter is evicted.

Hits only bump a counter and never take the eviction lock.
"""

import logging
import threading
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict
from uuid import UUID

from ..constants import CLOCK_MAX_COUNTER
from ..index.reference import SegmentLoader, SegmentReference
from ..segment import DataSegment

py_logger = logging.getLogger(__name__)


@dataclass
class _Entry:
    ref: SegmentReference
    nbytes: int
    counter: int = 1


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0


class SegmentCache:
    """Byte-bounded cache of whole data segments.

    Segments obtained with :meth:`get` are pinned and must be handed back with
    :meth:`release`.

    Args:
        capacity_bytes (int): total segment bytes the cache may hold. 0 disables caching.
        loader (SegmentLoader): reads a segment from storage on misses.
    """

    def __init__(self, capacity_bytes: int, loader: SegmentLoader) -> None:
        if capacity_bytes < 0:
            raise ValueError(f"Cache capacity must be >= 0, got {capacity_bytes}")
        self.capacity_bytes = capacity_bytes
        self.loader = loader
        self._entries: Dict[UUID, _Entry] = {}
        self._clock: Deque[UUID] = deque()
        self._used = 0
        self._lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.stats = CacheStats()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, segment_uuid: UUID) -> bool:
        return segment_uuid in self._entries

    @property
    def used_bytes(self) -> int:
        return self._used

    def get(self, ref: SegmentReference) -> DataSegment:
        """Pin the segment of ``ref``, loading it and caching it on a miss."""
        entry = self._entries.get(ref.segment_uuid)
        if entry is not None:
            entry.counter = min(entry.counter + 1, CLOCK_MAX_COUNTER)
            with self._stats_lock:
                self.stats.hits += 1
            return ref.acquire(self.loader)

        seg = ref.acquire(self.loader)
        with self._stats_lock:
            self.stats.misses += 1
        if 0 < ref.nbytes <= self.capacity_bytes:
            with self._lock:
                if ref.segment_uuid not in self._entries:
                    ref.mark_cached()
                    self._entries[ref.segment_uuid] = _Entry(ref, ref.nbytes)
                    self._clock.append(ref.segment_uuid)
                    self._used += ref.nbytes
                    self._evict_locked()
        return seg

    def release(self, ref: SegmentReference) -> None:
        """Unpin a segment obtained with :meth:`get`."""
        ref.release()
        if self._used > self.capacity_bytes:
            with self._lock:
                self._evict_locked()

    def _evict_locked(self) -> None:
        # every entry can be passed CLOCK_MAX_COUNTER + 1 times before the sweep gives up
        budget = len(self._clock) * (CLOCK_MAX_COUNTER + 1)
        while self._used > self.capacity_bytes and self._clock and budget > 0:
            budget -= 1
            segment_uuid = self._clock.popleft()
            entry = self._entries[segment_uuid]
            if entry.counter > 0:
                entry.counter -= 1
                self._clock.append(segment_uuid)
                continue
            if not entry.ref.try_evict():
                # pinned by a query
                self._clock.append(segment_uuid)
                continue
            del self._entries[segment_uuid]
            self._used -= entry.nbytes
            with self._stats_lock:
                self.stats.evictions += 1
            py_logger.debug(f"Evicted segment {segment_uuid} from the cache")

