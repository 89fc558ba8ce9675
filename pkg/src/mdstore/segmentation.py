# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Division of a chunk into groups of records that become segments.

Two schemes are available:

- ``random``: ceil(c * r / S) groups, every record assigned to one of them uniformly at
  random.
- ``kdtree``: the chunk is bulkloaded into a kd-tree, which is then traversed depth-first,
  bigger subtree first, emitting every subtree holding at most ``rps_max`` records as a
  group. Groups keep their subtree, packed, so that assembly reuses it.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import List

import numpy as np

from .config import SegmentationConfiguration
from .constants import NIL
from .exceptions import ChunkTooLargeError, RecordEncodingError
from .kdtree.pool import NodePool
from .kdtree.tree import BulkloadMode, KdTree, bulkload
from .record import RecordDescriptor
from .segment import pack_tree

py_logger = logging.getLogger(__name__)


class Scheme(str, Enum):
    RANDOM = "random"
    KDTREE = "kdtree"


@dataclass(eq=False)
class Chunk:
    """A micro-batch of records of one descriptor."""

    records: np.ndarray
    desc: RecordDescriptor

    def __post_init__(self) -> None:
        if self.records.dtype != self.desc.dtype:
            raise RecordEncodingError("Chunk records do not match the descriptor layout")
        self.desc.check_dims(self.records)

    @classmethod
    def from_bytes(cls, buffer, desc: RecordDescriptor) -> "Chunk":
        return cls(desc.frombuffer(buffer), desc)

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def nbytes(self) -> int:
        return self.count * self.desc.record_size

    @cached_property
    def keys(self) -> np.ndarray:
        """Order keys of every record, shape (count, dims)."""
        return self.desc.dim_keys(self.records)

    def check_size(self, max_records: int) -> None:
        if self.count > max_records:
            raise ChunkTooLargeError(
                f"Chunk of {self.count} records exceeds the maximum of {max_records}"
            )


@dataclass
class SegmentPlan:
    """Groups of chunk records (handles) and the branching dimension of each group."""

    scheme: Scheme
    groups: List[np.ndarray] = field(default_factory=list)
    initial_dims: List[int] = field(default_factory=list)
    #: Packed kd-tree of every group (kd-tree scheme), None otherwise.
    packed: List[np.ndarray | None] = field(default_factory=list)
    #: Number of times every record was assigned to a group.
    visits: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.groups)

    def nonempty(self) -> List[int]:
        return [i for i, g in enumerate(self.groups) if len(g)]

    def sizes(self) -> List[int]:
        return [len(g) for g in self.groups]


def compute_rps_max(cfg: SegmentationConfiguration, record_size: int) -> int:
    """Per-segment record cap of the kd-tree scheme: ceil(S / r) * overpacking."""
    if record_size < 1:
        raise ValueError(f"Record size must be >= 1, got {record_size}")
    per_segment = -(-cfg.max_segment_size // record_size)
    return max(1, math.floor(per_segment * cfg.overpacking))


def segment_random(
    chunk: Chunk, cfg: SegmentationConfiguration, rng: np.random.Generator
) -> SegmentPlan:
    """Assign every record uniformly at random to one of ceil(c * r / S) groups."""
    if chunk.count == 0:
        raise ValueError("Cannot segment an empty chunk")
    group_count = -(-chunk.nbytes // cfg.max_segment_size)
    assignment = rng.integers(0, group_count, size=chunk.count)
    order = np.argsort(assignment, kind="stable").astype(np.int64)
    bounds = np.cumsum(np.bincount(assignment, minlength=group_count))[:-1]
    groups = [np.ascontiguousarray(g) for g in np.split(order, bounds)]
    return SegmentPlan(
        scheme=Scheme.RANDOM,
        groups=groups,
        initial_dims=[0] * group_count,
        packed=[None] * group_count,
        visits=np.ones(chunk.count, dtype=np.int64),
    )


def _emit(tree: KdTree, node: int, depth: int, plan: SegmentPlan, record_size: int) -> None:
    handles, nodes = pack_tree(tree, node, record_size)
    plan.groups.append(handles)
    plan.initial_dims.append(tree.branching_dim(depth))
    plan.packed.append(nodes)
    assert plan.visits is not None
    plan.visits[handles] += 1
    tree.detach_subtree(node)


def partition_tree(tree: KdTree, rps_max: int, record_size: int) -> SegmentPlan:
    """Split a kd-tree into subtrees of at most ``rps_max`` records.

    Depth-first pre-order, bigger child first with ties to the left. A subtree small
    enough is emitted and detached; a node whose children have been emitted is
    re-checked with its updated count.
    """
    plan = SegmentPlan(scheme=Scheme.KDTREE, visits=np.zeros(len(tree.keys), dtype=np.int64))
    if tree.root == NIL:
        return plan
    # (node, depth, stage, second child)
    stack = [(tree.root, 0, 0, NIL)]
    while stack:
        node, depth, stage, second = stack.pop()
        if tree.subtree_count(node) <= rps_max:
            _emit(tree, node, depth, plan, record_size)
            continue
        if stage == 0:
            left, right = tree.left(node), tree.right(node)
            if tree.subtree_count(right) > tree.subtree_count(left):
                first, second = right, left
            else:
                first, second = left, right
            stack.append((node, depth, 1, second))
            stack.append((first, depth + 1, 0, NIL))
        elif stage == 1 and second != NIL:
            stack.append((node, depth, 2, NIL))
            stack.append((second, depth + 1, 0, NIL))
        else:
            # both children are gone, the node is alone
            _emit(tree, node, depth, plan, record_size)
    return plan


def segment_kdtree(
    chunk: Chunk,
    cfg: SegmentationConfiguration,
    pool: NodePool,
    rng: np.random.Generator,
) -> SegmentPlan:
    """kd-tree partitioning of a chunk. Every pool node is released before returning."""
    if chunk.count == 0:
        raise ValueError("Cannot segment an empty chunk")
    rps_max = compute_rps_max(cfg, chunk.desc.record_size)
    handles = np.arange(chunk.count, dtype=np.int64)
    with bulkload(
        handles,
        chunk.keys,
        0,
        BulkloadMode.ROOT_LEVEL_ONLY,
        pool,
        rng,
        cfg.pivot_samples,
    ) as tree:
        plan = partition_tree(tree, rps_max, chunk.desc.record_size)
    py_logger.debug(
        f"kd-tree partitioning: {chunk.count} records into {len(plan)} groups "
        f"(rps_max={rps_max})"
    )
    return plan


def segment_chunk(
    chunk: Chunk,
    cfg: SegmentationConfiguration,
    pool: NodePool,
    rng: np.random.Generator,
) -> SegmentPlan:
    """Plan the segments of a chunk with the configured scheme."""
    if Scheme(cfg.scheme) is Scheme.RANDOM:
        return segment_random(chunk, cfg, rng)
    return segment_kdtree(chunk, cfg, pool, rng)
