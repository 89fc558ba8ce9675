# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""The data store: one descriptor, one data directory, the two-level index on top."""

import logging
from pathlib import Path
from typing import Any, List, Literal, Sequence
from uuid import UUID

import numpy as np

from .config import MdstoreConfiguration
from .constants import DESCRIPTOR_FILE_NAME
from .exceptions import (
    DescriptorError,
    DescriptorMismatchError,
    InvalidStateError,
    SegmentFormatError,
    SegmentNotFoundError,
    StorageError,
)
from .index.reference import SegmentReference
from .index.rstar import GlobalIndex
from .ingest import FeedReport, Ingestor, WriterPool, WriteQueue, feed, feed_records
from .query.dsl import RangeQuery, parse_query
from .query.engine import Cursor, QueryExecutor, QueryResult, execute, open_cursor
from .query.iterators import IteratorKind
from .record import RecordDescriptor, parse_descriptor
from .segment import DataSegment, registry_of
from .segmentation import Chunk
from .stats import OverlapReport, overlap_stats
from .storage.cache import SegmentCache
from .storage.store import SegmentStore

py_logger = logging.getLogger(__name__)


def _resolve_descriptor(data_dir: Path, desc: RecordDescriptor | None) -> RecordDescriptor:
    path = data_dir / DESCRIPTOR_FILE_NAME
    stored = None
    if path.is_file():
        stored = parse_descriptor(path.read_text(encoding="utf-8"))
    if desc is None:
        if stored is None:
            raise DescriptorError(
                f"No record descriptor given and none stored in '{data_dir}'"
            )
        return stored
    if stored is not None and stored.type_uuid != desc.type_uuid:
        raise DescriptorMismatchError(
            f"Data directory '{data_dir}' holds records of type {stored.type_uuid}, "
            f"not {desc.type_uuid}"
        )
    return desc


class DataStore:
    """Embeddable store of fixed-schema records, indexed on their indexing dimensions.

    Ingested chunks become queryable immediately; writer threads persist them in the
    background. Use :meth:`open` to create or reopen a store.

    Args:
        desc (RecordDescriptor): schema of the stored records.
        config (MdstoreConfiguration): store configuration.
        read_only (bool): open without ingestion and writers. Defaults to False.
        durable (bool): fsync segment files on write. Defaults to True.
    """

    def __init__(
        self,
        desc: RecordDescriptor,
        config: MdstoreConfiguration | None = None,
        read_only: bool = False,
        durable: bool = True,
    ) -> None:
        self.desc = desc
        self.config = config or MdstoreConfiguration()
        self.read_only = read_only
        self.data_dir = Path(self.config.store.data_dir)
        self.index = GlobalIndex()
        self.segment_store = SegmentStore(self.data_dir, registry_of(desc), durable=durable)
        self.cache = SegmentCache(
            self.config.store.cache_capacity_bytes, self.segment_store.read
        )
        self.queue = WriteQueue(self.config.ingest.high_water_mark)
        self.ingestor: Ingestor | None = None
        self.writers: WriterPool | None = None
        if not read_only:
            self.ingestor = Ingestor(desc, self.config, self.index, self.queue)
            self.writers = WriterPool(self.queue, self.segment_store, self.config.ingest)
        self._executor: QueryExecutor | None = None
        self._closed = False

    @classmethod
    def open(
        cls,
        data_dir: str | Path | None = None,
        desc: RecordDescriptor | None = None,
        config: MdstoreConfiguration | None = None,
        read_only: bool = False,
        durable: bool = True,
    ) -> "DataStore":
        """Open the store of a data directory, recovering its persisted segments.

        The descriptor is saved in the directory on first use; later opens may omit it.

        Raises:
            DescriptorError: when no descriptor is given or stored.
            DescriptorMismatchError: when ``desc`` differs from the stored descriptor.
        """
        config = config or MdstoreConfiguration()
        if data_dir is not None:
            config = config.override({"data-directory": Path(data_dir)})
        directory = Path(config.store.data_dir)
        if read_only and not directory.is_dir():
            raise StorageError(f"Data directory '{directory}' does not exist")
        desc = _resolve_descriptor(directory, desc)
        store = cls(desc, config, read_only=read_only, durable=durable)
        if not read_only:
            desc_path = directory / DESCRIPTOR_FILE_NAME
            if not desc_path.is_file():
                desc_path.write_text(desc.to_xml(), encoding="utf-8")
        store.recover()
        store.start()
        return store

    def recover(self) -> int:
        """Register the persisted segments of the data directory in the global index.

        Unreadable files are skipped with a warning. Returns the number of segments
        registered.
        """
        if not self.read_only:
            self.segment_store.remove_temp_files()
        registered = 0
        for segment_uuid in self.segment_store.scan():
            if segment_uuid in self.index:
                continue
            try:
                info = self.segment_store.read_info(segment_uuid)
            except (SegmentFormatError, StorageError) as exc:
                py_logger.warning(f"Skipping segment file {segment_uuid}: {exc}")
                continue
            if info.segment_uuid != segment_uuid:
                py_logger.warning(
                    f"Skipping segment file {segment_uuid}: it holds {info.segment_uuid}"
                )
                continue
            ref = SegmentReference.on_disk(
                segment_uuid, info.rect, info.record_count, info.total_length
            )
            self.index.insert(ref)
            registered += 1
        py_logger.info(
            f"Recovered {registered} segments ({self.record_count} records) "
            f"from '{self.data_dir}'"
        )
        return registered

    def start(self) -> None:
        if self.writers is not None:
            self.writers.start()

    def _check_open(self) -> None:
        if self._closed:
            raise InvalidStateError("Data store is closed")

    def _require_ingestor(self) -> Ingestor:
        self._check_open()
        if self.ingestor is None:
            raise InvalidStateError("Data store is open read-only")
        return self.ingestor

    # Ingestion

    def ingest_chunk(self, chunk: Chunk | np.ndarray) -> List[UUID]:
        """Ingest one chunk; its records are queryable when this returns."""
        ingestor = self._require_ingestor()
        if not isinstance(chunk, Chunk):
            chunk = Chunk(np.asarray(chunk), self.desc)
        return ingestor.ingest_chunk(chunk)

    def ingest_records(
        self, records: np.ndarray, feeder_threads: int | None = None
    ) -> FeedReport:
        """Ingest an array of records in chunks of ``max_chunk_records``."""
        ingestor = self._require_ingestor()
        threads = feeder_threads or self.config.ingest.feeder_threads
        return feed_records(ingestor, records, threads)

    def feed(
        self,
        path: str | Path,
        fmt: Literal["binary", "csv"] = "binary",
        feeder_threads: int | None = None,
    ) -> FeedReport:
        """Ingest a binary or CSV record file."""
        ingestor = self._require_ingestor()
        threads = feeder_threads or self.config.ingest.feeder_threads
        return feed(ingestor, path, fmt, threads)

    def flush(self, timeout: float | None = None) -> bool:
        """Persist every queued segment now."""
        if self.writers is None:
            return True
        return self.writers.flush(timeout)

    # Queries

    def parse(self, query: str | RangeQuery) -> RangeQuery:
        if isinstance(query, RangeQuery):
            return query.validate(self.desc)
        return parse_query(query, self.desc)

    def _iterator(self, iterator: IteratorKind | str | None) -> IteratorKind:
        return IteratorKind(iterator if iterator is not None else self.config.store.iterator)

    def query(
        self, query: str | RangeQuery, iterator: IteratorKind | str | None = None
    ) -> QueryResult:
        self._check_open()
        return execute(
            self.index, self.cache, self.parse(query), self.desc, self._iterator(iterator)
        )

    def open_cursor(
        self, query: str | RangeQuery, iterator: IteratorKind | str | None = None
    ) -> Cursor:
        self._check_open()
        return open_cursor(
            self.index, self.cache, self.parse(query), self.desc, self._iterator(iterator)
        )

    @property
    def executor(self) -> QueryExecutor:
        """Query thread pool, created on first use."""
        self._check_open()
        if self._executor is None:
            self._executor = QueryExecutor(
                self.index,
                self.cache,
                self.desc,
                self.config.store.query_threads,
                self.config.store.iterator,
            )
        return self._executor

    def run_queries(
        self,
        queries: Sequence[str | RangeQuery],
        iterator: IteratorKind | str | None = None,
    ) -> List[QueryResult]:
        """Run queries concurrently on the query thread pool."""
        parsed = [self.parse(q) for q in queries]
        return self.executor.map(parsed, self._iterator(iterator))

    # Inspection

    @property
    def record_count(self) -> int:
        return sum(ref.record_count for ref in self.index.references())

    @property
    def segment_count(self) -> int:
        return len(self.index)

    def __len__(self) -> int:
        return self.record_count

    def references(self) -> List[SegmentReference]:
        return self.index.references()

    def segment(self, segment_uuid: UUID) -> DataSegment:
        """A segment, from memory or from its file."""
        ref = self.index.get(segment_uuid)
        if ref is None:
            raise SegmentNotFoundError(f"No segment {segment_uuid} in the store")
        seg = self.cache.get(ref)
        self.cache.release(ref)
        return seg

    def overlap_report(self, **metadata: Any) -> OverlapReport:
        return overlap_stats(self.index.references(), **metadata)

    # Lifecycle

    def close(self, flush: bool = True, timeout: float | None = None) -> None:
        """Stop the writers, persisting what is queued unless ``flush`` is False."""
        if self._closed:
            return
        if self._executor is not None:
            self._executor.shutdown()
        if self.writers is not None:
            self.writers.stop(flush=flush, timeout=timeout)
        self._closed = True
        py_logger.info(f"Closed data store '{self.data_dir}'")

    def __enter__(self) -> "DataStore":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def __repr__(self) -> str:
        return (
            f"DataStore('{self.data_dir}', segments={self.segment_count}, "
            f"read_only={self.read_only})"
        )
