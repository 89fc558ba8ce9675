# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Segment references: the in-memory proxies stored in the global index.

A reference tracks where its segment lives and who uses it::

    in_memory --> being_unloaded --> not_in_memory --> in_memory (reload)

The in-memory copy is dropped only while ``being_unloaded`` with no users, either
immediately or by the last :meth:`SegmentReference.release`. Acquirers arriving during
an unload wait for it to finish and then reload.
"""

import logging
import threading
from enum import Enum
from typing import TYPE_CHECKING, Callable
from uuid import UUID

from ..exceptions import InvalidStateError, StorageError

if TYPE_CHECKING:
    from ..segment import DataSegment, Hyperrectangle

py_logger = logging.getLogger(__name__)


class Residency(str, Enum):
    IN_MEMORY = "in_memory"
    BEING_UNLOADED = "being_unloaded"
    NOT_IN_MEMORY = "not_in_memory"


_TRANSITIONS = {
    Residency.IN_MEMORY: Residency.BEING_UNLOADED,
    Residency.BEING_UNLOADED: Residency.NOT_IN_MEMORY,
    Residency.NOT_IN_MEMORY: Residency.IN_MEMORY,
}

SegmentLoader = Callable[[UUID], "DataSegment"]


class SegmentReference:
    """Residency, persistence and usage state of one segment."""

    def __init__(
        self,
        segment_uuid: UUID,
        rect: "Hyperrectangle",
        record_count: int,
        nbytes: int,
        segment: "DataSegment | None" = None,
        persisted: bool = False,
    ) -> None:
        if segment is None and not persisted:
            raise InvalidStateError("A segment that is not in memory must be persisted")
        self.segment_uuid = segment_uuid
        self.rect = rect
        self.record_count = record_count
        self.nbytes = nbytes
        self._segment = segment
        self._residency = (
            Residency.IN_MEMORY if segment is not None else Residency.NOT_IN_MEMORY
        )
        self._persisted = persisted
        self._usage = 0
        self._cached = False
        self._loading = False
        self._cond = threading.Condition()

    @classmethod
    def for_segment(cls, seg: "DataSegment") -> "SegmentReference":
        """Reference to a freshly assembled, not yet persisted segment."""
        return cls(seg.segment_uuid, seg.rect, seg.record_count, seg.total_length, seg)

    @classmethod
    def on_disk(
        cls, segment_uuid: UUID, rect: "Hyperrectangle", record_count: int, nbytes: int
    ) -> "SegmentReference":
        """Reference to a persisted segment that is not loaded."""
        return cls(segment_uuid, rect, record_count, nbytes, persisted=True)

    @property
    def residency(self) -> Residency:
        return self._residency

    @property
    def persisted(self) -> bool:
        return self._persisted

    @property
    def usage_count(self) -> int:
        return self._usage

    @property
    def cached(self) -> bool:
        return self._cached

    @property
    def segment(self) -> "DataSegment | None":
        """The in-memory copy, if any. Callers must hold the reference to use it safely."""
        return self._segment

    def _move_to(self, residency: Residency) -> None:
        if _TRANSITIONS[self._residency] is not residency:
            raise InvalidStateError(
                f"Segment {self.segment_uuid}: illegal transition "
                f"{self._residency.value} -> {residency.value}"
            )
        self._residency = residency

    def _finish_unload(self) -> None:
        self._segment = None
        self._move_to(Residency.NOT_IN_MEMORY)
        py_logger.debug(f"Segment {self.segment_uuid} unloaded")

    def acquire(self, loader: SegmentLoader) -> "DataSegment":
        """Pin the segment in memory, loading it with ``loader`` when needed.

        Concurrent acquirers of an unloaded segment share a single load.
        """
        with self._cond:
            self._cond.wait_for(
                lambda: self._residency is not Residency.BEING_UNLOADED and not self._loading
            )
            self._usage += 1
            if self._residency is Residency.IN_MEMORY:
                assert self._segment is not None
                return self._segment
            self._loading = True
        try:
            seg = loader(self.segment_uuid)
        except BaseException as exc:
            with self._cond:
                self._usage -= 1
                self._loading = False
                self._cond.notify_all()
            if isinstance(exc, StorageError) or not isinstance(exc, Exception):
                raise
            raise StorageError(f"Cannot load segment {self.segment_uuid}: {exc}") from exc
        with self._cond:
            self._segment = seg
            self._move_to(Residency.IN_MEMORY)
            self._loading = False
            self._cond.notify_all()
        return seg

    def release(self) -> None:
        """Unpin the segment, finishing a pending unload when this was the last user.

        A persisted segment that the cache does not hold is dropped by its last user.
        """
        with self._cond:
            if self._usage == 0:
                raise InvalidStateError(
                    f"Segment {self.segment_uuid} released more often than acquired"
                )
            self._usage -= 1
            if self._usage > 0:
                return
            if (
                self._residency is Residency.IN_MEMORY
                and self._persisted
                and not self._cached
            ):
                self._move_to(Residency.BEING_UNLOADED)
            if self._residency is Residency.BEING_UNLOADED:
                self._finish_unload()
                self._cond.notify_all()

    def complete_persist(self) -> bool:
        """Mark the segment persisted and start unloading it unless the cache holds it.

        Returns True when an unload was started.
        """
        with self._cond:
            self._persisted = True
            if self._cached or self._residency is not Residency.IN_MEMORY:
                return False
            self._move_to(Residency.BEING_UNLOADED)
            if self._usage == 0:
                self._finish_unload()
            self._cond.notify_all()
            return True

    def mark_cached(self) -> None:
        with self._cond:
            self._cached = True

    def try_evict(self) -> bool:
        """Drop the cache's claim on an unused segment, unloading it when persisted.

        Returns False, changing nothing, while the segment is in use.
        """
        with self._cond:
            if self._usage > 0 or self._loading:
                return False
            self._cached = False
            if self._persisted and self._residency is Residency.IN_MEMORY:
                self._move_to(Residency.BEING_UNLOADED)
                self._finish_unload()
                self._cond.notify_all()
            return True

    def __repr__(self) -> str:
        return (
            f"SegmentReference({self.segment_uuid}, {self._residency.value}, "
            f"persisted={self._persisted}, usage={self._usage})"
        )
