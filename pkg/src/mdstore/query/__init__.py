"""Range queries: the query language, per-segment iterators and the execution engine."""

from .dsl import Aggregate, Bound, DimRange, RangeQuery, parse_query
from .engine import Cursor, QueryExecutor, QueryResult, execute, open_cursor
from .iterators import (
    IteratorKind,
    KdTreeIterator,
    RecordIterator,
    SequentialIterator,
    kd_iterate,
    seq_iterate,
)

__all__ = [
    "Aggregate",
    "Bound",
    "Cursor",
    "DimRange",
    "IteratorKind",
    "KdTreeIterator",
    "QueryExecutor",
    "QueryResult",
    "RangeQuery",
    "RecordIterator",
    "SequentialIterator",
    "execute",
    "kd_iterate",
    "open_cursor",
    "parse_query",
    "seq_iterate",
]
