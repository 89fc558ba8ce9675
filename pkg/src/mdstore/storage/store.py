# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Reader/writer of segment files.

Every segment lives in its own file ``<segment_uuid>.mdseg`` inside the data directory.
Writes go to a temporary file in the same directory, are flushed to disk and then
renamed over the final name, so a ``.mdseg`` file is either complete or absent.
"""

import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import List, Mapping
from uuid import UUID

from ..constants import SEGMENT_SUFFIX, TEMP_SUFFIX
from ..exceptions import SegmentNotFoundError, StorageError
from ..record import RecordDescriptor
from ..segment import (
    DIMS_HEAD,
    HEADER,
    DataSegment,
    SegmentInfo,
    deserialize,
    info_length,
    read_info,
    serialize,
)

py_logger = logging.getLogger(__name__)


def _fsync_directory(path: Path) -> None:
    """Best-effort fsync of a directory entry after a rename."""
    try:
        dir_fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(dir_fd)
    except OSError:
        pass
    finally:
        os.close(dir_fd)


class SegmentStore:
    """Segment files of one data directory.

    Args:
        directory (str | Path): data directory, created when missing.
        registry (Mapping[UUID, RecordDescriptor]): descriptors by record type uuid,
            used to decode segments.
        durable (bool): fsync files and the directory on write. Defaults to True.
    """

    def __init__(
        self,
        directory: str | Path,
        registry: Mapping[UUID, RecordDescriptor],
        durable: bool = True,
    ) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.registry = registry
        self.durable = durable
        self._counter_lock = threading.Lock()
        self.reads = 0
        self.writes = 0

    def path_for(self, segment_uuid: UUID) -> Path:
        return self.directory / f"{segment_uuid}{SEGMENT_SUFFIX}"

    def exists(self, segment_uuid: UUID) -> bool:
        return self.path_for(segment_uuid).is_file()

    def write(self, seg: DataSegment) -> Path:
        """Atomically write ``seg`` to its file.

        Raises:
            StorageError: when the file cannot be written; no partial file is left.
        """
        target = self.path_for(seg.segment_uuid)
        data = serialize(seg)
        try:
            fd, temp_name = tempfile.mkstemp(
                prefix=f".{target.stem}.", suffix=TEMP_SUFFIX, dir=self.directory
            )
        except OSError as exc:
            raise StorageError(f"Cannot create a temporary file in {self.directory}: {exc}")
        temp_path = Path(temp_name)
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
                handle.flush()
                if self.durable:
                    os.fsync(handle.fileno())
            os.replace(temp_path, target)
        except OSError as exc:
            temp_path.unlink(missing_ok=True)
            raise StorageError(f"Cannot write segment {seg.segment_uuid}: {exc}") from exc
        if self.durable:
            _fsync_directory(self.directory)
        with self._counter_lock:
            self.writes += 1
        py_logger.debug(f"Wrote segment {seg.segment_uuid} ({len(data)} bytes)")
        return target

    def _read_bytes(self, segment_uuid: UUID) -> bytes:
        try:
            return self.path_for(segment_uuid).read_bytes()
        except FileNotFoundError:
            raise SegmentNotFoundError(f"No file for segment {segment_uuid}")
        except OSError as exc:
            raise StorageError(f"Cannot read segment {segment_uuid}: {exc}") from exc

    def read(self, segment_uuid: UUID, verify_order: bool = True) -> DataSegment:
        """Read and validate a segment.

        Raises:
            SegmentNotFoundError: when the file does not exist.
            SegmentFormatError: when the file does not hold a valid segment.
        """
        seg = deserialize(self._read_bytes(segment_uuid), self.registry, verify_order)
        if seg.segment_uuid != segment_uuid:
            raise StorageError(
                f"File of segment {segment_uuid} holds segment {seg.segment_uuid}"
            )
        with self._counter_lock:
            self.reads += 1
        return seg

    def read_info(self, segment_uuid: UUID) -> SegmentInfo:
        """Read only what the global index needs: bounds, record count and size."""
        path = self.path_for(segment_uuid)
        try:
            with open(path, "rb") as handle:
                prefix = handle.read(HEADER.size + DIMS_HEAD.size)
                prefix += handle.read(info_length(prefix) - len(prefix))
        except FileNotFoundError:
            raise SegmentNotFoundError(f"No file for segment {segment_uuid}")
        except OSError as exc:
            raise StorageError(f"Cannot read segment {segment_uuid}: {exc}") from exc
        return read_info(prefix, self.registry)

    def delete(self, segment_uuid: UUID) -> None:
        try:
            self.path_for(segment_uuid).unlink()
        except FileNotFoundError:
            raise SegmentNotFoundError(f"No file for segment {segment_uuid}")
        except OSError as exc:
            raise StorageError(f"Cannot delete segment {segment_uuid}: {exc}") from exc

    def scan(self) -> List[UUID]:
        """Identifiers of the segment files in the directory, sorted."""
        found = []
        for path in self.directory.glob(f"*{SEGMENT_SUFFIX}"):
            try:
                found.append(UUID(path.stem))
            except ValueError:
                py_logger.warning(f"Ignoring '{path.name}': not a segment file name")
        return sorted(found)

    def remove_temp_files(self) -> int:
        """Delete leftovers of interrupted writes; returns how many were removed."""
        removed = 0
        for path in self.directory.glob(f".*{TEMP_SUFFIX}"):
            path.unlink(missing_ok=True)
            removed += 1
        if removed:
            py_logger.info(f"Removed {removed} temporary files of interrupted writes")
        return removed
