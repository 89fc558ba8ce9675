# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Per-segment record iterators."""

import abc
from enum import Enum
from typing import Iterator

import numpy as np

from ..exceptions import SegmentCorruptionError
from ..kdtree import kernels
from ..segment import DataSegment


class IteratorKind(str, Enum):
    KDTREE = "kd"
    SEQUENTIAL = "seq"


class RecordIterator(abc.ABC):
    """Records of one segment whose order keys lie in ``[lo, hi]`` on every dimension.

    Matching runs once, on first use; ``records_visited`` then tells how many records
    were examined.
    """

    def __init__(self, seg: DataSegment, lo: np.ndarray, hi: np.ndarray) -> None:
        self.seg = seg
        self.lo = np.ascontiguousarray(lo, dtype=np.int64)
        self.hi = np.ascontiguousarray(hi, dtype=np.int64)
        self._matches: np.ndarray | None = None
        self.records_visited = 0

    @abc.abstractmethod
    def _match(self) -> np.ndarray:
        """Indices into the records section of the matching records."""

    def matches(self) -> np.ndarray:
        if self._matches is None:
            self._matches = self._match()
        return self._matches

    def records(self) -> np.ndarray:
        return self.seg.records[self.matches()]

    def __iter__(self) -> Iterator[np.void]:
        return iter(self.records())

    def __len__(self) -> int:
        return len(self.matches())


class KdTreeIterator(RecordIterator):
    """Depth-first walk of the packed kd-tree, pruning subtrees outside the range."""

    def _match(self) -> np.ndarray:
        seg = self.seg
        if np.any(self.lo > seg.rect.hi) or np.any(seg.rect.lo > self.hi):
            self.records_visited = 0
            return np.empty(0, dtype=np.int64)
        matches, visited = kernels.packed_range_search(
            seg.keys,
            seg.record_index,
            seg.packed_left,
            seg.packed_right,
            seg.initial_dim,
            self.lo,
            self.hi,
        )
        if visited < 0:
            raise SegmentCorruptionError(
                f"Packed kd-tree of segment {seg.segment_uuid} is not a tree"
            )
        self.records_visited = int(visited)
        return matches


class SequentialIterator(RecordIterator):
    """Scan of the records section in storage order."""

    def _match(self) -> np.ndarray:
        keys = self.seg.keys
        self.records_visited = len(keys)
        inside = np.all((keys >= self.lo) & (keys <= self.hi), axis=1)
        return np.flatnonzero(inside).astype(np.int64)


def kd_iterate(seg: DataSegment, lo: np.ndarray, hi: np.ndarray) -> KdTreeIterator:
    return KdTreeIterator(seg, lo, hi)


def seq_iterate(seg: DataSegment, lo: np.ndarray, hi: np.ndarray) -> SequentialIterator:
    return SequentialIterator(seg, lo, hi)


def make_iterator(
    kind: IteratorKind | str, seg: DataSegment, lo: np.ndarray, hi: np.ndarray
) -> RecordIterator:
    if IteratorKind(kind) is IteratorKind.KDTREE:
        return kd_iterate(seg, lo, hi)
    return seq_iterate(seg, lo, hi)
