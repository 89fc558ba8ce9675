"""kd-tree used to partition chunks: node pool, compiled kernels and tree operations."""

from .pool import NodePool, pool_create
from .tree import BulkloadMode, KdTree, bulkload, partition_level, select_pivot

__all__ = [
    "BulkloadMode",
    "KdTree",
    "NodePool",
    "bulkload",
    "partition_level",
    "pool_create",
    "select_pivot",
]
