# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Data segments: assembly, packed kd-trees and the binary segment format.

Layout of a serialized segment (all integers little-endian)::

    header            16s segment uuid | Q total length | 16s record type uuid
    dims section      Q section length | I dim count | per dim: I field ordinal, 8s min, 8s max
    kd-tree section   Q section length | I initial dimension | I node count |
                      per node: Q record byte offset, i left, i right (-1 = nil)
    records section   Q section length | records, in packed-tree pre-order

Every section length counts the section's own length field. Minimum and maximum are raw
little-endian values zero-extended to 8 bytes.
"""

import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Any, Dict, Mapping, NamedTuple, Sequence, Tuple
from uuid import UUID, uuid4

import numpy as np

from .constants import NIL
from .exceptions import (
    RecordEncodingError,
    SegmentCorruptionError,
    SegmentLengthError,
    TruncatedSegmentError,
    UnknownRecordTypeError,
)
from .kdtree import kernels
from .kdtree.pool import NodePool
from .kdtree.tree import BulkloadMode, KdTree, bulkload
from .record import (
    INT64_MAX,
    INT64_MIN,
    DimValue,
    FieldType,
    RecordDescriptor,
    keys_to_float,
)

if TYPE_CHECKING:
    from .segmentation import Chunk

py_logger = logging.getLogger(__name__)

HEADER = struct.Struct("<16sQ16s")
DIMS_HEAD = struct.Struct("<QI")
DIM_ENTRY = struct.Struct("<I8s8s")
KDTREE_HEAD = struct.Struct("<QII")
RECORDS_HEAD = struct.Struct("<Q")

PACKED_NODE_DTYPE = np.dtype([("record_pos", "<u8"), ("left", "<i4"), ("right", "<i4")])


class Hyperrectangle:
    """Closed per-dimension intervals over order keys.

    Query rectangles may be unbounded on some dimensions; those use the extreme int64
    keys, which contain every value.
    """

    __slots__ = ("lo", "hi", "kinds")

    def __init__(self, lo: Any, hi: Any, kinds: Sequence[FieldType]) -> None:
        lo = np.array(lo, dtype=np.int64).reshape(-1)
        hi = np.array(hi, dtype=np.int64).reshape(-1)
        if lo.shape != hi.shape or len(lo) != len(kinds):
            raise ValueError("Bounds and kinds must have one entry per dimension")
        if np.any(lo > hi):
            raise ValueError("Hyperrectangle minimum exceeds maximum")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.lo = lo
        self.hi = hi
        self.kinds = tuple(kinds)

    @classmethod
    def from_keys(cls, keys: np.ndarray, kinds: Sequence[FieldType]) -> "Hyperrectangle":
        """Tight rectangle around a nonempty (count, dims) key matrix."""
        if len(keys) == 0:
            raise ValueError("Cannot bound an empty set of records")
        return cls(keys.min(axis=0), keys.max(axis=0), kinds)

    @classmethod
    def from_values(cls, bounds: Sequence[Tuple[DimValue, DimValue]]) -> "Hyperrectangle":
        return cls(
            [lo.key for lo, _ in bounds],
            [hi.key for _, hi in bounds],
            [lo.kind for lo, _ in bounds],
        )

    @classmethod
    def unbounded(cls, kinds: Sequence[FieldType]) -> "Hyperrectangle":
        return cls([INT64_MIN] * len(kinds), [INT64_MAX] * len(kinds), kinds)

    @property
    def dims(self) -> int:
        return len(self.kinds)

    def bounds(self) -> list:
        """Per-dimension ``(min, max)`` pairs as :class:`DimValue`."""
        return [
            (DimValue.from_key(int(lo), kind), DimValue.from_key(int(hi), kind))
            for lo, hi, kind in zip(self.lo, self.hi, self.kinds)
        ]

    def intersects(self, other: "Hyperrectangle") -> bool:
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def contains(self, keys: np.ndarray) -> np.ndarray:
        """Mask of the rows of a key matrix lying inside the rectangle."""
        return np.all((keys >= self.lo) & (keys <= self.hi), axis=1)

    def measures(self) -> Tuple[np.ndarray, np.ndarray]:
        """Bounds as float64 values, for areas and margins."""
        lo = np.empty(self.dims)
        hi = np.empty(self.dims)
        for d, kind in enumerate(self.kinds):
            lo[d], hi[d] = keys_to_float(np.array([self.lo[d], self.hi[d]]), kind)
        return lo, hi

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Hyperrectangle):
            return NotImplemented
        return (
            self.kinds == other.kinds
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    def __hash__(self) -> int:
        return hash((self.lo.tobytes(), self.hi.tobytes(), self.kinds))

    def __repr__(self) -> str:
        return f"Hyperrectangle(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


@dataclass(frozen=True, eq=False)
class DataSegment:
    """Immutable unit of storage: bounding rectangle, packed kd-tree and records."""

    segment_uuid: UUID
    desc: RecordDescriptor
    rect: Hyperrectangle
    initial_dim: int
    nodes: np.ndarray
    records: np.ndarray

    @property
    def record_type_uuid(self) -> UUID:
        return self.desc.type_uuid

    @property
    def record_count(self) -> int:
        return len(self.records)

    @property
    def dims_section_length(self) -> int:
        return DIMS_HEAD.size + DIM_ENTRY.size * self.desc.dims

    @property
    def kdtree_section_length(self) -> int:
        return KDTREE_HEAD.size + PACKED_NODE_DTYPE.itemsize * len(self.nodes)

    @property
    def records_section_length(self) -> int:
        return RECORDS_HEAD.size + self.desc.record_size * self.record_count

    @property
    def total_length(self) -> int:
        return (
            HEADER.size
            + self.dims_section_length
            + self.kdtree_section_length
            + self.records_section_length
        )

    @cached_property
    def keys(self) -> np.ndarray:
        """Order keys of the records section, shape (count, dims)."""
        return self.desc.dim_keys(self.records)

    @cached_property
    def record_index(self) -> np.ndarray:
        """Record index of every packed node."""
        return (self.nodes["record_pos"] // np.uint64(self.desc.record_size)).astype(np.int64)

    @cached_property
    def packed_left(self) -> np.ndarray:
        return self.nodes["left"].astype(np.int64)

    @cached_property
    def packed_right(self) -> np.ndarray:
        return self.nodes["right"].astype(np.int64)

    def structurally_equal(self, other: "DataSegment") -> bool:
        return (
            self.segment_uuid == other.segment_uuid
            and self.desc.type_uuid == other.desc.type_uuid
            and self.rect == other.rect
            and self.initial_dim == other.initial_dim
            and np.array_equal(self.nodes, other.nodes)
            and self.records.tobytes() == other.records.tobytes()
        )

    def summary(self) -> Dict[str, Any]:
        """Header and section overview, for inspection."""
        return {
            "segment_uuid": str(self.segment_uuid),
            "total_length": self.total_length,
            "record_type_uuid": str(self.record_type_uuid),
            "dims_section_length": self.dims_section_length,
            "dimensions": [
                {
                    "name": name,
                    "field_ordinal": ordinal,
                    "min": lo.value,
                    "max": hi.value,
                }
                for name, ordinal, (lo, hi) in zip(
                    self.desc.indexing_dims, self.desc.dim_field_ordinals, self.rect.bounds()
                )
            ],
            "kdtree_section_length": self.kdtree_section_length,
            "initial_dimension": self.initial_dim,
            "node_count": len(self.nodes),
            "records_section_length": self.records_section_length,
            "record_count": self.record_count,
        }


def pack_tree(tree: KdTree, node: int, record_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Pack the subtree at ``node`` into a pre-order node array.

    Records are laid out in the same pre-order, so node ``i`` references the record at
    byte offset ``i * record_size``. Returns ``(handles, nodes)`` where ``handles`` lists
    the chunk records in that order.
    """
    size = tree.subtree_count(node)
    pool = tree.pool
    handles, p_left, p_right, packed = kernels.pack_kernel(
        node, size, pool.record_ref, pool.left, pool.right
    )
    if packed != size:
        raise SegmentCorruptionError(
            f"Subtree count {size} disagrees with the {packed} nodes reached when packing"
        )
    nodes = np.empty(size, dtype=PACKED_NODE_DTYPE)
    nodes["record_pos"] = np.arange(size, dtype=np.uint64) * np.uint64(record_size)
    nodes["left"] = p_left
    nodes["right"] = p_right
    return handles, nodes


def assemble(
    group: np.ndarray,
    chunk: "Chunk",
    initial_dim: int = 0,
    nodes: np.ndarray | None = None,
    pool: NodePool | None = None,
    rng: np.random.Generator | None = None,
    pivot_samples: int = 3,
) -> DataSegment:
    """Build a segment from chunk records ``group``.

    When ``nodes`` is given, ``group`` is already in the packed pre-order of that tree.
    Otherwise a full recursive kd-tree over the group is bulkloaded from ``pool`` (a
    private pool when None) with root dimension 0.
    """
    if len(group) == 0:
        raise ValueError("Cannot assemble a segment from an empty group")
    desc = chunk.desc
    if nodes is None:
        if initial_dim != 0:
            raise ValueError("Freshly bulkloaded segments start at dimension 0")
        handles = np.array(group, dtype=np.int64, copy=True)
        pool = pool if pool is not None else NodePool(len(handles))
        rng = rng if rng is not None else np.random.default_rng()
        with bulkload(
            handles, chunk.keys, 0, BulkloadMode.FULL_RECURSIVE, pool, rng, pivot_samples
        ) as tree:
            handles, nodes = pack_tree(tree, tree.root, desc.record_size)
    else:
        handles = np.asarray(group, dtype=np.int64)
        if len(nodes) != len(handles):
            raise ValueError("Packed tree and group sizes differ")

    records = chunk.records[handles]
    rect = Hyperrectangle.from_keys(chunk.keys[handles], desc.dim_kinds)
    return DataSegment(
        segment_uuid=uuid4(),
        desc=desc,
        rect=rect,
        initial_dim=initial_dim,
        nodes=nodes,
        records=records,
    )


def serialize(seg: DataSegment) -> bytes:
    """Deterministic binary encoding of a segment."""
    desc = seg.desc
    parts = [
        HEADER.pack(seg.segment_uuid.bytes, seg.total_length, seg.record_type_uuid.bytes),
        DIMS_HEAD.pack(seg.dims_section_length, desc.dims),
    ]
    for ordinal, (lo, hi) in zip(desc.dim_field_ordinals, seg.rect.bounds()):
        parts.append(DIM_ENTRY.pack(ordinal, lo.raw, hi.raw))
    parts.append(KDTREE_HEAD.pack(seg.kdtree_section_length, seg.initial_dim, len(seg.nodes)))
    parts.append(np.ascontiguousarray(seg.nodes, dtype=PACKED_NODE_DTYPE).tobytes())
    parts.append(RECORDS_HEAD.pack(seg.records_section_length))
    parts.append(np.ascontiguousarray(seg.records).tobytes())
    return b"".join(parts)


def _canonical_bound(raw: bytes, kind: FieldType, dim: int) -> DimValue:
    """Decode an 8-byte bound slot, accepting only the encoding serialize would write."""
    value = DimValue.from_raw(raw, kind)
    if DimValue.from_key(value.key, kind).raw != raw:
        raise SegmentCorruptionError(
            f"Dimension {dim} bound {raw.hex()} is not a canonical {kind.value} encoding"
        )
    return value


def _read_dims(
    buf: memoryview, offset: int, desc: RecordDescriptor
) -> Tuple[int, Hyperrectangle]:
    if len(buf) < offset + DIMS_HEAD.size:
        raise TruncatedSegmentError("Buffer ends inside the dims section header")
    length, dims = DIMS_HEAD.unpack_from(buf, offset)
    if length != DIMS_HEAD.size + DIM_ENTRY.size * dims:
        raise SegmentLengthError(
            f"Dims section length {length} inconsistent with {dims} dimensions"
        )
    if len(buf) < offset + length:
        raise TruncatedSegmentError("Buffer ends inside the dims section")
    if dims != desc.dims:
        raise SegmentCorruptionError(
            f"Segment has {dims} dimensions, the record descriptor {desc.dims}"
        )
    bounds = []
    position = offset + DIMS_HEAD.size
    for d in range(dims):
        ordinal, lo_raw, hi_raw = DIM_ENTRY.unpack_from(buf, position)
        position += DIM_ENTRY.size
        if ordinal != desc.dim_field_ordinals[d]:
            raise SegmentCorruptionError(
                f"Dimension {d} refers to field {ordinal}, expected "
                f"{desc.dim_field_ordinals[d]}"
            )
        kind = desc.dim_kinds[d]
        bounds.append((_canonical_bound(lo_raw, kind, d), _canonical_bound(hi_raw, kind, d)))
    try:
        rect = Hyperrectangle.from_values(bounds)
    except ValueError as exc:
        raise SegmentCorruptionError(f"Invalid bounding hyperrectangle: {exc}")
    return offset + length, rect


def _read_header(
    buf: memoryview, registry: Mapping[UUID, RecordDescriptor]
) -> Tuple[UUID, RecordDescriptor]:
    if len(buf) < HEADER.size:
        raise TruncatedSegmentError(
            f"Buffer of {len(buf)} bytes is shorter than the {HEADER.size}-byte header"
        )
    seg_uuid, total, type_uuid = HEADER.unpack_from(buf, 0)
    if len(buf) < total:
        raise TruncatedSegmentError(
            f"Buffer of {len(buf)} bytes is shorter than the declared length {total}"
        )
    if len(buf) > total:
        raise SegmentLengthError(
            f"Buffer of {len(buf)} bytes is longer than the declared length {total}"
        )
    desc = registry.get(UUID(bytes=type_uuid))
    if desc is None:
        raise UnknownRecordTypeError(f"Unknown record type {UUID(bytes=type_uuid)}")
    return UUID(bytes=seg_uuid), desc


def read_bounds(
    buffer: bytes, registry: Mapping[UUID, RecordDescriptor]
) -> Tuple[UUID, Hyperrectangle]:
    """Decode only the header and the dims section of a segment.

    ``buffer`` may be a prefix of the segment; the declared total length is not checked.
    """
    buf = memoryview(buffer).cast("B")
    if len(buf) < HEADER.size:
        raise TruncatedSegmentError("Buffer is shorter than the segment header")
    seg_uuid, _, type_uuid = HEADER.unpack_from(buf, 0)
    desc = registry.get(UUID(bytes=type_uuid))
    if desc is None:
        raise UnknownRecordTypeError(f"Unknown record type {UUID(bytes=type_uuid)}")
    _, rect = _read_dims(buf, HEADER.size, desc)
    return UUID(bytes=seg_uuid), rect


def deserialize(
    buffer: bytes, registry: Mapping[UUID, RecordDescriptor], verify_order: bool = True
) -> DataSegment:
    """Decode and validate a serialized segment.

    Raises:
        SegmentFormatError: a subclass naming the first violated constraint.
    """
    buf = memoryview(buffer).cast("B")
    seg_uuid, desc = _read_header(buf, registry)
    offset, rect = _read_dims(buf, HEADER.size, desc)

    if len(buf) < offset + KDTREE_HEAD.size:
        raise TruncatedSegmentError("Buffer ends inside the kd-tree section header")
    kd_length, initial_dim, node_count = KDTREE_HEAD.unpack_from(buf, offset)
    if kd_length != KDTREE_HEAD.size + PACKED_NODE_DTYPE.itemsize * node_count:
        raise SegmentLengthError(
            f"kd-tree section length {kd_length} inconsistent with {node_count} nodes"
        )
    if len(buf) < offset + kd_length + RECORDS_HEAD.size:
        raise TruncatedSegmentError("Buffer ends inside the kd-tree section")
    nodes = np.frombuffer(
        buf, dtype=PACKED_NODE_DTYPE, count=node_count, offset=offset + KDTREE_HEAD.size
    ).copy()
    offset += kd_length

    (rec_length,) = RECORDS_HEAD.unpack_from(buf, offset)
    if rec_length != RECORDS_HEAD.size + desc.record_size * node_count:
        raise SegmentLengthError(
            f"Records section length {rec_length} inconsistent with {node_count} records"
        )
    if offset + rec_length != len(buf):
        raise SegmentLengthError("Section lengths do not add up to the total length")
    records = np.frombuffer(
        buf,
        dtype=desc.dtype,
        count=node_count,
        offset=offset + RECORDS_HEAD.size,
    ).copy()

    if node_count == 0:
        raise SegmentCorruptionError("Segment holds no records")
    if initial_dim >= desc.dims:
        raise SegmentCorruptionError(
            f"Initial dimension {initial_dim} out of range for {desc.dims} dimensions"
        )
    seg = DataSegment(
        segment_uuid=seg_uuid,
        desc=desc,
        rect=rect,
        initial_dim=initial_dim,
        nodes=nodes,
        records=records,
    )
    _validate(seg, verify_order)
    return seg


def _validate(seg: DataSegment, verify_order: bool) -> None:
    r = seg.desc.record_size
    n = seg.record_count
    positions = seg.nodes["record_pos"]
    if np.any(positions % np.uint64(r)) or np.any(positions >= np.uint64(n * r)):
        raise SegmentCorruptionError("Packed node references an invalid record offset")
    if np.unique(positions).size != n:
        raise SegmentCorruptionError("Several packed nodes reference the same record")
    reached = kernels.count_reachable(seg.packed_left, seg.packed_right)
    if reached != n:
        raise SegmentCorruptionError(
            "Packed kd-tree child indices do not form a single tree over all nodes"
        )
    try:
        seg.desc.check_dims(seg.records)
    except RecordEncodingError as exc:
        raise SegmentCorruptionError(str(exc))
    keys = seg.keys
    if not (
        np.array_equal(keys.min(axis=0), seg.rect.lo)
        and np.array_equal(keys.max(axis=0), seg.rect.hi)
    ):
        raise SegmentCorruptionError("Bounding hyperrectangle is not tight around the records")
    if verify_order:
        bad = kernels.check_packed_order(
            keys, seg.record_index, seg.packed_left, seg.packed_right, seg.initial_dim
        )
        if bad != NIL:
            raise SegmentCorruptionError(f"Packed kd-tree ordering violated at node {bad}")


def registry_of(*descs: RecordDescriptor) -> Dict[UUID, RecordDescriptor]:
    return {d.type_uuid: d for d in descs}


class SegmentInfo(NamedTuple):
    """What the global index needs to know about a persisted segment."""

    segment_uuid: UUID
    rect: Hyperrectangle
    record_count: int
    total_length: int


def info_length(prefix: bytes) -> int:
    """Bytes of a segment to read for :func:`read_info`, given its first
    ``HEADER.size + DIMS_HEAD.size`` bytes."""
    if len(prefix) < HEADER.size + DIMS_HEAD.size:
        raise TruncatedSegmentError("Buffer ends before the dims section header")
    length, _ = DIMS_HEAD.unpack_from(prefix, HEADER.size)
    return HEADER.size + length + KDTREE_HEAD.size


def read_info(buffer: bytes, registry: Mapping[UUID, RecordDescriptor]) -> SegmentInfo:
    """Decode identifier, bounds, record count and total length from a segment prefix."""
    seg_uuid, rect = read_bounds(buffer, registry)
    buf = memoryview(buffer).cast("B")
    _, total, _ = HEADER.unpack_from(buf, 0)
    dims_length, _ = DIMS_HEAD.unpack_from(buf, HEADER.size)
    offset = HEADER.size + dims_length
    if len(buf) < offset + KDTREE_HEAD.size:
        raise TruncatedSegmentError("Buffer ends inside the kd-tree section header")
    _, _, node_count = KDTREE_HEAD.unpack_from(buf, offset)
    return SegmentInfo(seg_uuid, rect, node_count, total)
