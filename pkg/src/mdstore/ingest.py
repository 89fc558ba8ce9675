# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Ingestion path: chunks become segments that are queryable at once and persisted later.

1. a feeder cuts the input stream into chunks and hands them to :class:`Ingestor`;
2. the ingestor segments and assembles every chunk;
3. each segment reference is inserted into the global index, then queued;
4. :class:`WriterPool` threads periodically drain the queue and write segments to disk.
"""

import csv
import itertools
import logging
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Deque, Iterable, List, Literal, Sequence, Tuple
from uuid import UUID

import numpy as np
from pydantic import BaseModel

from .config import IngestConfiguration, MdstoreConfiguration
from .constants import WRITER_BACKOFF_CAP
from .exceptions import (
    DescriptorMismatchError,
    InvalidStateError,
    MdstoreError,
    RecordEncodingError,
)
from .index.reference import SegmentReference
from .index.rstar import GlobalIndex
from .kdtree.pool import NodePool, pool_create
from .record import CsvRecordEncoder, RecordDescriptor
from .segment import DataSegment, assemble
from .segmentation import Chunk, Scheme, segment_chunk
from .storage.store import SegmentStore
from .utils import split_evenly, timer

py_logger = logging.getLogger(__name__)

WriteErrorHook = Callable[[SegmentReference, Exception], None]


class WriteQueue:
    """FIFO of segment references waiting to be persisted.

    :meth:`put` blocks while ``high_water_mark`` references are waiting. References taken
    with :meth:`get_batch` count as in flight until :meth:`task_done`.
    """

    def __init__(self, high_water_mark: int) -> None:
        if high_water_mark < 1:
            raise ValueError(f"high_water_mark must be >= 1, got {high_water_mark}")
        self.high_water_mark = high_water_mark
        self._items: Deque[SegmentReference] = deque()
        self._in_flight = 0
        self._cond = threading.Condition()

    def __len__(self) -> int:
        return len(self._items)

    @property
    def in_flight(self) -> int:
        return self._in_flight

    def put(self, ref: SegmentReference, timeout: float | None = None) -> bool:
        """Enqueue ``ref``; returns False when ``timeout`` expired under back-pressure."""
        with self._cond:
            if not self._cond.wait_for(
                lambda: len(self._items) < self.high_water_mark, timeout=timeout
            ):
                return False
            self._items.append(ref)
            self._cond.notify_all()
            return True

    def get_batch(self, max_items: int) -> List[SegmentReference]:
        with self._cond:
            batch = [self._items.popleft() for _ in range(min(max_items, len(self._items)))]
            self._in_flight += len(batch)
            if batch:
                self._cond.notify_all()
            return batch

    def requeue_front(self, refs: Sequence[SegmentReference]) -> None:
        """Put references back at the head, in their original order. Ignores the
        high-water mark."""
        with self._cond:
            self._items.extendleft(reversed(refs))
            self._cond.notify_all()

    def task_done(self, count: int) -> None:
        with self._cond:
            if count > self._in_flight:
                raise InvalidStateError("More queue items completed than taken")
            self._in_flight -= count
            self._cond.notify_all()

    def wait_idle(self, timeout: float | None = None) -> bool:
        """Wait until nothing is queued or in flight."""
        with self._cond:
            return self._cond.wait_for(
                lambda: not self._items and self._in_flight == 0, timeout=timeout
            )


class Ingestor:
    """Turns chunks into indexed, queued segments.

    At most ``ingestor_threads`` chunks are processed at once, which is what the node
    pool is dimensioned for.
    """

    def __init__(
        self,
        desc: RecordDescriptor,
        config: MdstoreConfiguration,
        index: GlobalIndex,
        queue: WriteQueue,
        pool: NodePool | None = None,
    ) -> None:
        self.desc = desc
        self.config = config
        self.index = index
        self.queue = queue
        ingest = config.ingest
        self.pool = pool or pool_create(ingest.max_chunk_records, ingest.ingestor_threads)
        self._slots = threading.BoundedSemaphore(ingest.ingestor_threads)
        self._chunk_numbers = itertools.count()
        self._lock = threading.Lock()
        self.records_ingested = 0
        self.segments_created = 0

    def _rng(self, chunk_no: int) -> np.random.Generator:
        seed = self.config.segmentation.seed
        if seed is None:
            return np.random.default_rng()
        return np.random.default_rng([seed, chunk_no])

    def build_segments(self, chunk: Chunk, rng: np.random.Generator) -> List[DataSegment]:
        """Segment and assemble a chunk without publishing anything."""
        cfg = self.config.segmentation
        plan = segment_chunk(chunk, cfg, self.pool, rng)
        segments = []
        for i in plan.nonempty():
            if plan.scheme is Scheme.KDTREE:
                seg = assemble(plan.groups[i], chunk, plan.initial_dims[i], plan.packed[i])
            else:
                seg = assemble(
                    plan.groups[i],
                    chunk,
                    pool=self.pool,
                    rng=rng,
                    pivot_samples=cfg.pivot_samples,
                )
            segments.append(seg)
        return segments

    def ingest_chunk(self, chunk: Chunk) -> List[UUID]:
        """Segment a chunk, index its segments and queue them for writing.

        Every segment is searchable when this returns.

        Raises:
            DescriptorMismatchError: when the chunk has another record type.
            ChunkTooLargeError: when the chunk exceeds ``max_chunk_records``.
        """
        if chunk.desc.type_uuid != self.desc.type_uuid:
            raise DescriptorMismatchError(
                f"Chunk record type {chunk.desc.type_uuid} differs from the store's "
                f"{self.desc.type_uuid}"
            )
        chunk.check_size(self.config.ingest.max_chunk_records)
        if chunk.count == 0:
            return []
        chunk_no = next(self._chunk_numbers)
        with self._slots:
            segments = self.build_segments(chunk, self._rng(chunk_no))
        refs = [SegmentReference.for_segment(seg) for seg in segments]
        for ref in refs:
            self.index.insert(ref)
        for ref in refs:
            self.queue.put(ref)
        with self._lock:
            self.records_ingested += chunk.count
            self.segments_created += len(refs)
        py_logger.debug(f"Chunk {chunk_no}: {chunk.count} records, {len(refs)} segments")
        return [ref.segment_uuid for ref in refs]


def _log_write_error(ref: SegmentReference, exc: Exception) -> None:
    py_logger.error(f"Writing segment {ref.segment_uuid} failed: {exc}")


class WriterPool:
    """Writer threads persisting queued segments every ``writer_period_ms``.

    A failed write leaves the reference queued for the next wakeup; the writer then
    backs off exponentially, up to ten periods.
    """

    def __init__(
        self,
        queue: WriteQueue,
        store: SegmentStore,
        config: IngestConfiguration,
        on_error: WriteErrorHook | None = None,
    ) -> None:
        self.queue = queue
        self.store = store
        self.config = config
        self.on_error = on_error or _log_write_error
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []
        self._lock = threading.Lock()
        self.segments_written = 0
        self.write_failures = 0

    @property
    def running(self) -> bool:
        return any(t.is_alive() for t in self._threads)

    def _tick(self) -> Tuple[int, int]:
        batch = self.queue.get_batch(self.config.writer_batch_max)
        written = 0
        failed = []
        for ref in batch:
            seg = ref.segment
            try:
                if seg is None:
                    raise InvalidStateError(f"Segment {ref.segment_uuid} is not in memory")
                self.store.write(seg)
            except MdstoreError as exc:
                failed.append(ref)
                self.on_error(ref, exc)
                continue
            ref.complete_persist()
            written += 1
        if failed:
            self.queue.requeue_front(failed)
        self.queue.task_done(len(batch))
        with self._lock:
            self.segments_written += written
            self.write_failures += len(failed)
        return written, len(failed)

    def tick(self) -> int:
        """Write up to ``writer_batch_max`` queued segments; returns how many were written."""
        written, _ = self._tick()
        return written

    def _run(self) -> None:
        period = self.config.writer_period_ms / 1000.0
        delay = period
        failures = 0
        while not self._stop.wait(delay):
            _, failed = self._tick()
            if failed:
                failures += 1
                delay = min(period * 2**failures, period * WRITER_BACKOFF_CAP)
                py_logger.warning(f"{failed} segment writes failed, retrying in {delay:.3f}s")
            else:
                failures = 0
                delay = period

    def start(self) -> None:
        if self.running:
            return
        self._stop.clear()
        self._threads = [
            threading.Thread(target=self._run, name=f"mdstore-writer-{i}", daemon=True)
            for i in range(self.config.writer_threads)
        ]
        for thread in self._threads:
            thread.start()
        py_logger.info(f"Started {len(self._threads)} writer threads")

    def flush(self, timeout: float | None = None) -> bool:
        """Write everything queued from the calling thread. Returns False when failing
        writes kept segments queued past ``timeout``."""
        with timer() as watch:
            while len(self.queue) or self.queue.in_flight:
                if not len(self.queue):
                    self.queue.wait_idle(timeout=0.05)
                    continue
                _, failed = self._tick()
                if timeout is not None and watch.elapsed > timeout:
                    return False
                if failed:
                    self.queue.wait_idle(timeout=self.config.writer_period_ms / 1000.0)
        return True

    def stop(self, flush: bool = True, timeout: float | None = None) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join()
        self._threads = []
        if flush:
            self.flush(timeout)
        py_logger.info("Writer threads stopped")


class FeederReport(BaseModel):
    """Throughput of one feeder thread."""

    feeder: int
    records: int = 0
    chunks: int = 0
    segments: int = 0
    seconds: float = 0.0
    error: str | None = None

    @property
    def records_per_second(self) -> float:
        return self.records / self.seconds if self.seconds > 0 else 0.0


class FeedReport(BaseModel):
    """Throughput of a whole feed run."""

    records: int
    chunks: int
    segments: int
    seconds: float
    feeders: List[FeederReport]
    truncated_cells: int = 0

    @property
    def records_per_second(self) -> float:
        return self.records / self.seconds if self.seconds > 0 else 0.0

    @property
    def errors(self) -> List[str]:
        return [f.error for f in self.feeders if f.error is not None]


def _summarize(feeders: List[FeederReport], seconds: float, truncated: int) -> FeedReport:
    return FeedReport(
        records=sum(f.records for f in feeders),
        chunks=sum(f.chunks for f in feeders),
        segments=sum(f.segments for f in feeders),
        seconds=seconds,
        feeders=feeders,
        truncated_cells=truncated,
    )


def _feed_chunks(
    ingestor: Ingestor, report: FeederReport, chunks: Iterable[Chunk]
) -> FeederReport:
    with timer() as watch:
        try:
            for chunk in chunks:
                uuids = ingestor.ingest_chunk(chunk)
                report.records += chunk.count
                report.chunks += 1
                report.segments += len(uuids)
        except MdstoreError as exc:
            report.error = str(exc)
            py_logger.error(f"Feeder {report.feeder} aborted: {exc}")
    report.seconds = watch.elapsed
    return report


def feed_records(
    ingestor: Ingestor, records: np.ndarray, feeder_threads: int = 1
) -> FeedReport:
    """Push binary records through ``feeder_threads`` concurrent feeders.

    Records are split into near-even contiguous slices, one per feeder, and every feeder
    submits chunks of ``max_chunk_records``.
    """
    desc = ingestor.desc
    step = ingestor.config.ingest.max_chunk_records

    def run(feeder: int, start: int, stop: int) -> FeederReport:
        chunks = (
            Chunk(np.asarray(records[lo : min(lo + step, stop)]), desc)
            for lo in range(start, stop, step)
        )
        return _feed_chunks(ingestor, FeederReport(feeder=feeder), chunks)

    slices = split_evenly(len(records), feeder_threads)
    with timer() as watch, ThreadPoolExecutor(max_workers=feeder_threads) as executor:
        futures = [executor.submit(run, i, a, b) for i, (a, b) in enumerate(slices)]
        feeders = [f.result() for f in futures]
    return _summarize(feeders, watch.elapsed, 0)


def read_csv_rows(path: str | Path, desc: RecordDescriptor) -> List[List[str]]:
    """CSV rows of a file, without the header row when it names the descriptor fields."""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if rows and rows[0] == [f.name for f in desc.fields]:
        rows = rows[1:]
    return rows


def feed_csv_rows(
    ingestor: Ingestor, rows: Sequence[Sequence[str]], feeder_threads: int = 1
) -> FeedReport:
    """Like :func:`feed_records`, with text-to-binary conversion on the feeder threads."""
    desc = ingestor.desc
    step = ingestor.config.ingest.max_chunk_records
    encoders = [CsvRecordEncoder(desc) for _ in range(feeder_threads)]

    def chunks(encoder: CsvRecordEncoder, start: int, stop: int) -> Iterable[Chunk]:
        for lo in range(start, stop, step):
            block = rows[lo : min(lo + step, stop)]
            yield Chunk.from_bytes(b"".join(encoder.encode(row) for row in block), desc)

    def run(feeder: int, start: int, stop: int) -> FeederReport:
        return _feed_chunks(
            ingestor, FeederReport(feeder=feeder), chunks(encoders[feeder], start, stop)
        )

    slices = split_evenly(len(rows), feeder_threads)
    with timer() as watch, ThreadPoolExecutor(max_workers=feeder_threads) as executor:
        futures = [executor.submit(run, i, a, b) for i, (a, b) in enumerate(slices)]
        feeders = [f.result() for f in futures]
    truncated = sum(e.truncated_cells for e in encoders)
    return _summarize(feeders, watch.elapsed, truncated)


def load_binary(path: str | Path, desc: RecordDescriptor) -> np.ndarray:
    """Memory-map a binary record file."""
    path = Path(path)
    size = path.stat().st_size
    if size % desc.record_size:
        raise RecordEncodingError(
            f"File of {size} bytes is not a whole number of {desc.record_size}-byte records"
        )
    if size == 0:
        return np.empty(0, dtype=desc.dtype)
    return np.memmap(path, dtype=desc.dtype, mode="r")


def feed(
    ingestor: Ingestor,
    path: str | Path,
    fmt: Literal["binary", "csv"] = "binary",
    feeder_threads: int = 1,
) -> FeedReport:
    """Ingest a binary or CSV file with ``feeder_threads`` feeders."""
    if fmt == "csv":
        return feed_csv_rows(ingestor, read_csv_rows(path, ingestor.desc), feeder_threads)
    return feed_records(ingestor, load_binary(path, ingestor.desc), feeder_threads)
