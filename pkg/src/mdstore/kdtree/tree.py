# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""In-memory kd-tree built over a chunk during segmentation."""

import logging
from enum import Enum
from typing import Iterator, Tuple

import numpy as np

from ..constants import NIL
from ..exceptions import DimensionError, InvalidStateError
from . import kernels
from .pool import NodePool

py_logger = logging.getLogger(__name__)


class BulkloadMode(str, Enum):
    #: Sampled-median pivots at every level.
    FULL_RECURSIVE = "full_recursive"
    #: Sampled-median pivot at the root only, middle-element pivots below.
    ROOT_LEVEL_ONLY = "root_level_only"


def _as_handles(handles: np.ndarray) -> np.ndarray:
    if handles.dtype != np.int64 or not handles.flags.c_contiguous:
        raise TypeError("Record handles must be a C-contiguous int64 array")
    return handles


def _as_keys(keys: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(keys, dtype=np.int64)


def select_pivot(
    handles: np.ndarray, keys: np.ndarray, dim: int, samples: int, rng: np.random.Generator
) -> int:
    """Index into ``handles`` of the median, on ``dim``, of ``samples`` random records."""
    if len(handles) < 1:
        raise ValueError("Cannot select a pivot from an empty slice")
    if samples < 1 or samples % 2 == 0:
        raise ValueError(f"The number of pivot samples must be odd and >= 1, got {samples}")
    position, _ = kernels.median_position(
        _as_handles(handles),
        _as_keys(keys),
        dim,
        0,
        len(handles),
        samples,
        rng.random(samples),
        0,
        np.empty(samples, dtype=np.int64),
    )
    return int(position)


def partition_level(handles: np.ndarray, keys: np.ndarray, dim: int, pivot_index: int) -> int:
    """Partition ``handles`` in place around ``handles[pivot_index]`` on ``dim``.

    Returns the split point: values before it are <= the pivot value, values after it
    are greater. Only handles move.
    """
    if not 0 <= pivot_index < len(handles):
        raise IndexError(f"Pivot index {pivot_index} out of range for {len(handles)} records")
    return int(
        kernels.partition_slice(
            _as_handles(handles), _as_keys(keys), dim, 0, len(handles), pivot_index
        )
    )


class KdTree:
    """kd-tree whose nodes live in a shared :class:`NodePool`.

    A tree is confined to one ingestion task. Its nodes go back to the pool with
    :meth:`release`, detached subtrees included.
    """

    def __init__(
        self,
        pool: NodePool,
        keys: np.ndarray,
        node_ids: np.ndarray,
        root: int,
        root_dim: int,
    ) -> None:
        self.pool = pool
        self.keys = keys
        self.node_ids = node_ids
        self.root = root
        self.root_dim = root_dim
        self.dims = keys.shape[1]
        self._released = False

    def __len__(self) -> int:
        return 0 if self.root == NIL else int(self.pool.count[self.root])

    def __enter__(self) -> "KdTree":
        return self

    def __exit__(self, *exc) -> None:
        self.release()

    def record(self, node: int) -> int:
        return int(self.pool.record_ref[node])

    def left(self, node: int) -> int:
        return int(self.pool.left[node])

    def right(self, node: int) -> int:
        return int(self.pool.right[node])

    def parent(self, node: int) -> int:
        return int(self.pool.parent[node])

    def subtree_count(self, node: int) -> int:
        return 0 if node == NIL else int(self.pool.count[node])

    def branching_dim(self, depth: int) -> int:
        return (self.root_dim + depth) % self.dims

    def depth_of(self, node: int) -> int:
        depth = 0
        while self.parent(node) != NIL:
            node = self.parent(node)
            depth += 1
        return depth

    def preorder(self, node: int | None = None) -> Iterator[Tuple[int, int]]:
        """Yield ``(node, depth)`` pairs of the subtree at ``node`` (default: root)."""
        start = self.root if node is None else node
        if start == NIL:
            return
        stack = [(start, self.depth_of(start) if node is not None else 0)]
        while stack:
            current, depth = stack.pop()
            yield current, depth
            for child in (self.right(current), self.left(current)):
                if child != NIL:
                    stack.append((child, depth + 1))

    def detach_subtree(self, node: int) -> int:
        """Unlink the subtree at ``node`` and shrink every ancestor's count.

        Returns the detached subtree root. Its nodes stay acquired until :meth:`release`.
        """
        if self._released:
            raise InvalidStateError("The tree has been released")
        ancestor = node
        while self.parent(ancestor) != NIL:
            ancestor = self.parent(ancestor)
        if ancestor != self.root or self.root == NIL:
            raise InvalidStateError(f"Node {node} is not reachable from the tree root")

        size = self.subtree_count(node)
        par = self.parent(node)
        if par == NIL:
            self.root = NIL
        else:
            if self.left(par) == node:
                self.pool.left[par] = NIL
            else:
                self.pool.right[par] = NIL
            self.pool.parent[node] = NIL
            while par != NIL:
                self.pool.count[par] -= size
                par = self.parent(par)
        return node

    def release(self) -> None:
        """Return every node of this tree to the pool."""
        if self._released:
            return
        self._released = True
        self.root = NIL
        self.pool.release_many(self.node_ids)


def bulkload(
    handles: np.ndarray,
    keys: np.ndarray,
    root_dim: int,
    mode: BulkloadMode,
    pool: NodePool,
    rng: np.random.Generator,
    pivot_samples: int = 3,
) -> KdTree:
    """Build a kd-tree over the records ``handles`` (rows of the order-key matrix ``keys``).

    ``handles`` is reordered in place. Dimensions rotate round-robin from ``root_dim``.

    Raises:
        PoolExhaustedError: when the pool has fewer free nodes than records.
    """
    keys = _as_keys(keys)
    handles = _as_handles(handles)
    dims = keys.shape[1]
    if not 0 <= root_dim < dims:
        raise DimensionError(f"Root dimension {root_dim} out of range for {dims} dimensions")
    mode = BulkloadMode(mode)
    n = len(handles)
    node_ids = pool.acquire_many(n)
    full = mode is BulkloadMode.FULL_RECURSIVE
    draws = n * pivot_samples if full else pivot_samples
    try:
        root = kernels.bulkload_kernel(
            handles,
            keys,
            root_dim,
            full,
            pivot_samples,
            rng.random(draws if n else 0),
            node_ids,
            pool.record_ref,
            pool.left,
            pool.right,
            pool.parent,
            pool.count,
        )
    except BaseException:
        pool.release_many(node_ids)
        raise
    return KdTree(pool, keys, node_ids, int(root), root_dim)
