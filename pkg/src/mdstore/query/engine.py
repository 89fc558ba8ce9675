# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Query processing: global index search, per-segment iteration and aggregation.

A :class:`Cursor` snapshots the list of overlapping segment references when it is
opened. Segments are pinned through the cache one at a time while they are iterated,
so that a query never holds more than one segment in memory on its own.
"""

import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterator, List, Sequence, Tuple

import numpy as np
import pandas as pd

from ..exceptions import InvalidStateError
from ..index.reference import SegmentReference
from ..index.rstar import GlobalIndex
from ..record import FieldType, RecordDescriptor
from ..segment import Hyperrectangle
from ..storage.cache import SegmentCache
from ..utils import timer
from .dsl import Aggregate, RangeQuery
from .iterators import IteratorKind, make_iterator

py_logger = logging.getLogger(__name__)


class Cursor:
    """State of one query over a fixed list of segments.

    The list of matching references is taken when the cursor is opened, so segments
    ingested later are not visited. Segments themselves are not held from open:
    each one is acquired through the cache when the cursor reaches it and released
    before the next, so at most one segment is pinned at a time. A segment that left
    memory after the cursor was opened is loaded again from its file. A cursor is
    meant to be consumed by a single thread.
    """

    def __init__(
        self,
        query: RangeQuery,
        desc: RecordDescriptor,
        cache: SegmentCache,
        refs: Sequence[SegmentReference],
        bounds: Tuple[np.ndarray, np.ndarray] | None,
        iterator_kind: IteratorKind | str = IteratorKind.KDTREE,
    ) -> None:
        self.query = query
        self.desc = desc
        self.cache = cache
        self.refs = list(refs)
        self.bounds = bounds
        self.iterator_kind = IteratorKind(iterator_kind)
        self.segments_inspected = 0
        self.records_visited = 0
        self.current: SegmentReference | None = None
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def batches(self) -> Iterator[np.ndarray]:
        """Matching records, one structured array per inspected segment.

        Arrays are copies and stay valid after the segment has been released.
        """
        if self._closed:
            raise InvalidStateError("Cursor is closed")
        if self.bounds is None:
            return
        lo, hi = self.bounds
        for ref in self.refs:
            if self._closed:
                return
            seg = self.cache.get(ref)
            self.current = ref
            try:
                it = make_iterator(self.iterator_kind, seg, lo, hi)
                batch = it.records()
                self.records_visited += it.records_visited
                self.segments_inspected += 1
            finally:
                self.current = None
                self.cache.release(ref)
            yield batch

    def __iter__(self) -> Iterator[np.void]:
        for batch in self.batches():
            yield from batch

    def fetch_all(self) -> np.ndarray:
        batches = list(self.batches())
        if not batches:
            return np.empty(0, dtype=self.desc.dtype)
        return np.concatenate(batches)

    def close(self) -> None:
        self._closed = True

    def __enter__(self) -> "Cursor":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def open_cursor(
    index: GlobalIndex,
    cache: SegmentCache,
    query: RangeQuery,
    desc: RecordDescriptor,
    iterator_kind: IteratorKind | str = IteratorKind.KDTREE,
) -> Cursor:
    """Search the global index for the segments overlapping ``query``.

    Query bounds are closed over order keys here; exclusive bounds were already
    turned into inclusive keys. An empty interval on any dimension yields a cursor over
    no segments.
    """
    bounds = query.key_bounds(desc)
    if bounds is None:
        return Cursor(query, desc, cache, [], None, iterator_kind)
    rect = Hyperrectangle(bounds[0], bounds[1], desc.dim_kinds)
    refs = index.search_overlap(rect)
    py_logger.debug(f"Query '{query.text}': {len(refs)} overlapping segments")
    return Cursor(query, desc, cache, refs, bounds, iterator_kind)


@dataclass
class QueryResult:
    """Rows of a query with the work it took to produce them."""

    columns: List[str]
    rows: List[Tuple[Any, ...]]
    segments_inspected: int = 0
    records_visited: int = 0
    seconds: float = 0.0
    query: str = ""
    aggregate: bool = field(default=False, repr=False)

    @property
    def value(self) -> Any:
        """The aggregate value, or None when there is none."""
        if not self.rows:
            return None
        return self.rows[0][0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def to_records(self) -> List[dict]:
        return [dict(zip(self.columns, row)) for row in self.rows]


def _aggregate_label(query: RangeQuery) -> str:
    if query.aggregate is Aggregate.COUNT_ALL:
        label = "count(*)"
    else:
        label = f"{query.aggregate.value}({query.aggregate_field})"
    if query.scale is not None:
        label += f"/{query.scale:g}"
    return label


def _aggregate(query: RangeQuery, cursor: Cursor) -> List[Tuple[Any, ...]]:
    if query.aggregate is Aggregate.COUNT_ALL:
        value: Any = sum(len(batch) for batch in cursor.batches())
    else:
        assert query.aggregate_field is not None
        parts = [batch[query.aggregate_field] for batch in cursor.batches()]
        values = np.concatenate(parts) if parts else np.empty(0)
        if len(values) == 0:
            return []
        if query.aggregate is Aggregate.AVG:
            value = float(np.sum(values, dtype=np.float64) / len(values))
        elif query.aggregate is Aggregate.MIN:
            value = values.min().item()
        else:
            value = values.max().item()
    if query.scale is not None:
        value = float(np.float64(value) / query.scale)
    return [(value,)]


def _column(records: np.ndarray, name: str, kind: FieldType) -> Any:
    column = records[name]
    if kind is FieldType.CHAR_ARRAY:
        # bytes items come without their trailing NUL padding
        return [cell.decode("utf-8", errors="replace") for cell in column.tolist()]
    return column


def _project(query: RangeQuery, desc: RecordDescriptor, records: np.ndarray) -> pd.DataFrame:
    names = list(query.projection) if query.projection is not None else [
        f.name for f in desc.fields
    ]
    frame = pd.DataFrame(
        {name: _column(records, name, desc.field(name).field_type) for name in names},
        columns=names,
    )
    if query.distinct:
        frame = frame.drop_duplicates(ignore_index=True)
    if query.order_by is not None:
        name, descending = query.order_by
        frame = frame.sort_values(name, ascending=not descending, kind="stable")
    if query.limit is not None:
        frame = frame.head(query.limit)
    return frame


def _plain(row: Tuple[Any, ...]) -> Tuple[Any, ...]:
    return tuple(cell.item() if isinstance(cell, np.generic) else cell for cell in row)


def execute(
    index: GlobalIndex,
    cache: SegmentCache,
    query: RangeQuery,
    desc: RecordDescriptor,
    iterator_kind: IteratorKind | str = IteratorKind.KDTREE,
) -> QueryResult:
    """Run a validated query to completion.

    ``count(*)`` over no matches is 0; the other aggregates produce no row.
    """
    with timer() as watch, open_cursor(index, cache, query, desc, iterator_kind) as cursor:
        if query.is_aggregate:
            columns = [_aggregate_label(query)]
            rows = _aggregate(query, cursor)
        else:
            frame = _project(query, desc, cursor.fetch_all())
            columns = list(frame.columns)
            rows = [_plain(row) for row in frame.itertuples(index=False, name=None)]
    return QueryResult(
        columns=columns,
        rows=rows,
        segments_inspected=cursor.segments_inspected,
        records_visited=cursor.records_visited,
        seconds=watch.elapsed,
        query=query.text,
        aggregate=query.is_aggregate,
    )


class QueryExecutor:
    """Thread pool running independent queries, one cursor per query."""

    def __init__(
        self,
        index: GlobalIndex,
        cache: SegmentCache,
        desc: RecordDescriptor,
        threads: int = 4,
        iterator_kind: IteratorKind | str = IteratorKind.KDTREE,
    ) -> None:
        self.index = index
        self.cache = cache
        self.desc = desc
        self.iterator_kind = IteratorKind(iterator_kind)
        self._executor = ThreadPoolExecutor(max_workers=threads, thread_name_prefix="query")

    def submit(
        self, query: RangeQuery, iterator_kind: IteratorKind | str | None = None
    ) -> "Future[QueryResult]":
        kind = self.iterator_kind if iterator_kind is None else IteratorKind(iterator_kind)
        return self._executor.submit(execute, self.index, self.cache, query, self.desc, kind)

    def map(
        self, queries: Sequence[RangeQuery], iterator_kind: IteratorKind | str | None = None
    ) -> List[QueryResult]:
        futures = [self.submit(q, iterator_kind) for q in queries]
        return [f.result() for f in futures]

    def shutdown(self, wait: bool = True) -> None:
        self._executor.shutdown(wait=wait)

    def __enter__(self) -> "QueryExecutor":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.shutdown()
