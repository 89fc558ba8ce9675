# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""In-memory R*-tree over segment bounding hyperrectangles.

Insertion follows the R*-tree: ChooseSubtree (least overlap enlargement above the
leaves, least area enlargement higher up), forced reinsertion of the entries farthest
from the node center on the first overflow of a level, and the margin/overlap driven
split. Intersection tests compare exact order keys; areas, margins and overlaps use the
decoded float64 values.
"""

import logging
import math
import threading
from typing import Dict, Iterator, List, Set, Tuple
from uuid import UUID

import numpy as np

from ..constants import RSTAR_MAX_ENTRIES, RSTAR_MIN_FILL, RSTAR_REINSERT_FRACTION
from ..exceptions import InvalidStateError
from ..segment import Hyperrectangle
from .reference import SegmentReference

py_logger = logging.getLogger(__name__)


class _Entry:
    """Rectangle plus either a child node or a segment reference."""

    __slots__ = ("lo", "hi", "flo", "fhi", "child", "ref")

    def __init__(self, lo, hi, flo, fhi, child=None, ref=None) -> None:
        self.lo = lo
        self.hi = hi
        self.flo = flo
        self.fhi = fhi
        self.child: "_Node | None" = child
        self.ref: SegmentReference | None = ref

    @classmethod
    def for_reference(cls, rect: Hyperrectangle, ref: SegmentReference) -> "_Entry":
        flo, fhi = rect.measures()
        return cls(rect.lo, rect.hi, flo, fhi, ref=ref)

    @classmethod
    def for_node(cls, node: "_Node") -> "_Entry":
        entry = cls(None, None, None, None, child=node)
        entry.fit(node)
        return entry

    def fit(self, node: "_Node") -> None:
        """Set the rectangle to the minimum bounding rectangle of ``node``."""
        lo, hi = node.key_bounds()
        flo, fhi = node.float_bounds()
        self.lo, self.hi = lo.min(axis=0), hi.max(axis=0)
        self.flo, self.fhi = flo.min(axis=0), fhi.max(axis=0)


class _Node:
    __slots__ = ("level", "entries", "_keys", "_floats")

    def __init__(self, level: int, entries: List[_Entry] | None = None) -> None:
        #: 0 for leaves
        self.level = level
        self.entries: List[_Entry] = entries if entries is not None else []
        self._keys: Tuple[np.ndarray, np.ndarray] | None = None
        self._floats: Tuple[np.ndarray, np.ndarray] | None = None

    def touch(self) -> None:
        self._keys = None
        self._floats = None

    def key_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._keys is None:
            self._keys = (
                np.stack([e.lo for e in self.entries]),
                np.stack([e.hi for e in self.entries]),
            )
        return self._keys

    def float_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._floats is None:
            self._floats = (
                np.stack([e.flo for e in self.entries]),
                np.stack([e.fhi for e in self.entries]),
            )
        return self._floats

    def add(self, entry: _Entry) -> None:
        self.entries.append(entry)
        self.touch()

    def entry_for(self, child: "_Node") -> _Entry:
        for e in self.entries:
            if e.child is child:
                return e
        raise InvalidStateError("Child node missing from its parent")

    def refit(self, child: "_Node") -> None:
        self.entry_for(child).fit(child)
        self.touch()


def _area(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.prod(hi - lo, axis=-1)


def _margin(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.sum(hi - lo, axis=-1)


def _overlap(lo_a, hi_a, lo_b, hi_b) -> np.ndarray:
    extent = np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b)
    return np.prod(np.clip(extent, 0.0, None), axis=-1)


class RStarTree:
    """R*-tree of ``(Hyperrectangle, SegmentReference)`` entries.

    Not thread-safe: :class:`GlobalIndex` wraps it in a lock.
    """

    def __init__(
        self,
        max_entries: int = RSTAR_MAX_ENTRIES,
        min_fill: float = RSTAR_MIN_FILL,
        reinsert_fraction: float = RSTAR_REINSERT_FRACTION,
    ) -> None:
        if max_entries < 4:
            raise ValueError(f"max_entries must be >= 4, got {max_entries}")
        self.max_entries = max_entries
        self.min_entries = max(2, int(max_entries * min_fill))
        self.reinsert_count = max(1, int(max_entries * reinsert_fraction))
        self.root = _Node(level=0)
        self._size = 0
        self._reinserted: Set[int] = set()

    def __len__(self) -> int:
        return self._size

    @property
    def height(self) -> int:
        return self.root.level + 1

    def insert(self, rect: Hyperrectangle, ref: SegmentReference) -> None:
        """Add an entry, restoring the tree invariants."""
        self._reinserted = set()
        self._insert_entry(_Entry.for_reference(rect, ref), level=0)
        self._size += 1

    def _insert_entry(self, entry: _Entry, level: int) -> None:
        path = [self.root]
        node = self.root
        while node.level > level:
            child = node.entries[self._choose_subtree(node, entry)].child
            assert child is not None
            node = child
            path.append(node)
        node.add(entry)
        self._fix_path(path)

    def _choose_subtree(self, node: _Node, entry: _Entry) -> int:
        lo, hi = node.float_bounds()
        grown_lo = np.minimum(lo, entry.flo)
        grown_hi = np.maximum(hi, entry.fhi)
        area = _area(lo, hi)
        enlargement = _area(grown_lo, grown_hi) - area
        if node.level == 1:
            # children are leaves: least overlap enlargement first
            before = _overlap(lo[:, None], hi[:, None], lo[None], hi[None])
            after = _overlap(grown_lo[:, None], grown_hi[:, None], lo[None], hi[None])
            np.fill_diagonal(before, 0.0)
            np.fill_diagonal(after, 0.0)
            overlap_growth = after.sum(axis=1) - before.sum(axis=1)
            return int(np.lexsort((area, enlargement, overlap_growth))[0])
        return int(np.lexsort((area, enlargement))[0])

    def _fix_path(self, path: List[_Node]) -> None:
        for i in range(len(path) - 1, -1, -1):
            node = path[i]
            if len(node.entries) > self.max_entries:
                if i > 0 and node.level not in self._reinserted:
                    self._reinserted.add(node.level)
                    removed = self._take_far_entries(node)
                    for j in range(i, 0, -1):
                        path[j - 1].refit(path[j])
                    for e in removed:
                        self._insert_entry(e, node.level)
                    return
                sibling = self._split(node)
                if i == 0:
                    self.root = _Node(
                        node.level + 1, [_Entry.for_node(node), _Entry.for_node(sibling)]
                    )
                    return
                path[i - 1].add(_Entry.for_node(sibling))
            if i > 0:
                path[i - 1].refit(node)

    def _take_far_entries(self, node: _Node) -> List[_Entry]:
        """Remove the entries whose centers lie farthest from the node center.
        They come back closest first."""
        lo, hi = node.float_bounds()
        centers = (lo + hi) / 2.0
        node_center = (lo.min(axis=0) + hi.max(axis=0)) / 2.0
        distance = np.sum((centers - node_center) ** 2, axis=1)
        order = np.argsort(-distance, kind="stable")
        far = order[: self.reinsert_count]
        keep = np.sort(order[self.reinsert_count :])
        removed = [node.entries[k] for k in far[::-1]]
        node.entries = [node.entries[k] for k in keep]
        node.touch()
        return removed

    def _split(self, node: _Node) -> _Node:
        """Split an overflowing node in place; returns the new sibling."""
        lo, hi = node.float_bounds()
        n, dims = lo.shape
        m = self.min_entries
        splits = np.arange(m, n - m + 1)

        def distributions(axis: int):
            for order in (
                np.lexsort((hi[:, axis], lo[:, axis])),
                np.lexsort((lo[:, axis], hi[:, axis])),
            ):
                s_lo, s_hi = lo[order], hi[order]
                pre_lo = np.minimum.accumulate(s_lo, axis=0)
                pre_hi = np.maximum.accumulate(s_hi, axis=0)
                suf_lo = np.minimum.accumulate(s_lo[::-1], axis=0)[::-1]
                suf_hi = np.maximum.accumulate(s_hi[::-1], axis=0)[::-1]
                yield order, (pre_lo[splits - 1], pre_hi[splits - 1]), (
                    suf_lo[splits],
                    suf_hi[splits],
                )

        best_axis, best_margin = 0, math.inf
        for axis in range(dims):
            margin = sum(
                float(np.sum(_margin(*first) + _margin(*second)))
                for _, first, second in distributions(axis)
            )
            if margin < best_margin:
                best_axis, best_margin = axis, margin

        best = None
        for order, first, second in distributions(best_axis):
            overlap = _overlap(first[0], first[1], second[0], second[1])
            area = _area(*first) + _area(*second)
            k = int(np.lexsort((area, overlap))[0])
            candidate = (overlap[k], area[k])
            if best is None or candidate < best[0]:
                best = (candidate, order, int(splits[k]))
        assert best is not None
        _, order, split = best
        entries = node.entries
        node.entries = [entries[k] for k in order[:split]]
        node.touch()
        return _Node(node.level, [entries[k] for k in order[split:]])

    def search_overlap(self, query: Hyperrectangle) -> List[SegmentReference]:
        """References whose rectangles intersect ``query`` (closed intervals)."""
        found: List[SegmentReference] = []
        if not self.root.entries:
            return found
        stack = [self.root]
        while stack:
            node = stack.pop()
            lo, hi = node.key_bounds()
            hits = np.flatnonzero(np.all((lo <= query.hi) & (query.lo <= hi), axis=1))
            for k in hits:
                entry = node.entries[k]
                if node.level == 0:
                    assert entry.ref is not None
                    found.append(entry.ref)
                else:
                    assert entry.child is not None
                    stack.append(entry.child)
        return found

    def references(self) -> Iterator[SegmentReference]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            for entry in node.entries:
                if node.level == 0:
                    assert entry.ref is not None
                    yield entry.ref
                else:
                    assert entry.child is not None
                    stack.append(entry.child)

    def delete(self, ref: SegmentReference) -> bool:
        """Remove the entry of ``ref``; returns False when it is not in the tree."""
        path = self._find_leaf(self.root, ref, [])
        if path is None:
            return False
        leaf = path[-1]
        leaf.entries = [e for e in leaf.entries if e.ref is not ref]
        leaf.touch()
        self._size -= 1

        orphans: List[Tuple[_Entry, int]] = []
        for i in range(len(path) - 1, 0, -1):
            node, parent = path[i], path[i - 1]
            if len(node.entries) < self.min_entries:
                parent.entries = [e for e in parent.entries if e.child is not node]
                parent.touch()
                orphans.extend((e, node.level) for e in node.entries)
            else:
                parent.refit(node)
        for entry, level in orphans:
            self._reinserted = set()
            self._insert_entry(entry, level)
        while self.root.level > 0 and len(self.root.entries) == 1:
            child = self.root.entries[0].child
            assert child is not None
            self.root = child
        if self.root.level > 0 and not self.root.entries:
            self.root = _Node(level=0)
        return True

    def _find_leaf(
        self, node: _Node, ref: SegmentReference, path: List[_Node]
    ) -> List[_Node] | None:
        path = path + [node]
        if node.level == 0:
            return path if any(e.ref is ref for e in node.entries) else None
        for entry in node.entries:
            if np.all(entry.lo <= ref.rect.lo) and np.all(ref.rect.hi <= entry.hi):
                assert entry.child is not None
                found = self._find_leaf(entry.child, ref, path)
                if found is not None:
                    return found
        return None

    def validate(self) -> None:
        """Check the structural invariants.

        Raises:
            InvalidStateError: on the first violation found.
        """
        stack = [(self.root, True)]
        while stack:
            node, is_root = stack.pop()
            count = len(node.entries)
            if count > self.max_entries or (not is_root and count < self.min_entries):
                raise InvalidStateError(
                    f"Node at level {node.level} holds {count} entries, outside "
                    f"[{self.min_entries}, {self.max_entries}]"
                )
            for entry in node.entries:
                if node.level == 0:
                    if entry.ref is None or entry.child is not None:
                        raise InvalidStateError("Leaf entries must reference segments")
                    continue
                child = entry.child
                if child is None or child.level != node.level - 1:
                    raise InvalidStateError("Leaves are not all at the same depth")
                lo, hi = child.key_bounds()
                if not (
                    np.array_equal(entry.lo, lo.min(axis=0))
                    and np.array_equal(entry.hi, hi.max(axis=0))
                ):
                    raise InvalidStateError("Entry rectangle is not the child's bounding box")
                stack.append((child, False))


class GlobalIndex:
    """Thread-safe first-level index: an R*-tree guarded by one lock.

    The lock covers tree operations only; no storage I/O happens under it.
    """

    def __init__(self, max_entries: int = RSTAR_MAX_ENTRIES) -> None:
        self._tree = RStarTree(max_entries=max_entries)
        self._refs: Dict[UUID, SegmentReference] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._refs)

    def __contains__(self, segment_uuid: UUID) -> bool:
        return segment_uuid in self._refs

    def insert(self, ref: SegmentReference) -> None:
        with self._lock:
            self._tree.insert(ref.rect, ref)
            self._refs[ref.segment_uuid] = ref

    def search_overlap(self, query: Hyperrectangle) -> List[SegmentReference]:
        with self._lock:
            return self._tree.search_overlap(query)

    def get(self, segment_uuid: UUID) -> SegmentReference | None:
        return self._refs.get(segment_uuid)

    def references(self) -> List[SegmentReference]:
        with self._lock:
            return list(self._refs.values())

    def remove(self, segment_uuid: UUID) -> bool:
        with self._lock:
            ref = self._refs.pop(segment_uuid, None)
            return ref is not None and self._tree.delete(ref)

    @property
    def height(self) -> int:
        return self._tree.height
