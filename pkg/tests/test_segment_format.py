# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Tests for segment assembly, bounding rectangles and the binary segment format."""

import dataclasses
import struct
from uuid import UUID

import numpy as np
import pytest

from mdstore.exceptions import (
    SegmentCorruptionError,
    SegmentLengthError,
    TruncatedSegmentError,
    UnknownRecordTypeError,
)
from mdstore.record import DimValue, FieldType
from mdstore.segment import (
    DIM_ENTRY,
    DIMS_HEAD,
    HEADER,
    PACKED_NODE_DTYPE,
    Hyperrectangle,
    assemble,
    deserialize,
    info_length,
    read_bounds,
    read_info,
    registry_of,
    serialize,
)
from mdstore.segmentation import Chunk

F, I = FieldType.FLOAT32, FieldType.INT64


@pytest.fixture
def segment(chunk3):
    group = np.arange(0, 2000, 10, dtype=np.int64)
    return assemble(group, chunk3, rng=np.random.default_rng(0))


@pytest.fixture
def registry(desc3):
    return registry_of(desc3)


def test_hyperrectangle_closed_intersection():
    a = Hyperrectangle([0, 0], [10, 10], [I, I])
    assert a.intersects(Hyperrectangle([10, 10], [20, 20], [I, I]))
    assert not a.intersects(Hyperrectangle([11, 0], [20, 20], [I, I]))
    assert a.intersects(Hyperrectangle.unbounded([I, I]))
    mask = a.contains(np.array([[0, 10], [5, 11], [-1, 3]], dtype=np.int64))
    assert mask.tolist() == [True, False, False]


def test_hyperrectangle_validation():
    with pytest.raises(ValueError):
        Hyperrectangle([1, 0], [0, 0], [I, I])
    with pytest.raises(ValueError):
        Hyperrectangle([0], [0, 1], [I, I])
    with pytest.raises(ValueError):
        Hyperrectangle.from_keys(np.empty((0, 2), dtype=np.int64), [I, I])


def test_hyperrectangle_float_bounds():
    rect = Hyperrectangle.from_values(
        [
            (DimValue(-2.5, F), DimValue(3.5, F)),
            (DimValue(-7, I), DimValue(7, I)),
        ]
    )
    assert rect.bounds() == [
        (DimValue(-2.5, F), DimValue(3.5, F)),
        (DimValue(-7, I), DimValue(7, I)),
    ]
    lo, hi = rect.measures()
    assert lo.tolist() == [-2.5, -7.0]
    assert hi.tolist() == [3.5, 7.0]
    assert rect == Hyperrectangle(rect.lo, rect.hi, rect.kinds)
    assert hash(rect) == hash(Hyperrectangle(rect.lo, rect.hi, rect.kinds))


def test_assemble_bounds_are_tight(segment, chunk3):
    expected = chunk3.records[::10]
    assert segment.record_count == 200
    assert sorted(r.tobytes() for r in segment.records) == sorted(
        r.tobytes() for r in expected
    )
    for d, name in enumerate(["d0", "d1", "d2"]):
        lo, hi = segment.rect.bounds()[d]
        assert lo.value == float(expected[name].min())
        assert hi.value == float(expected[name].max())
    # records are laid out in packed pre-order
    assert segment.record_index.tolist() == list(range(200))


def test_assemble_rejects_bad_arguments(chunk3):
    with pytest.raises(ValueError):
        assemble(np.empty(0, dtype=np.int64), chunk3)
    with pytest.raises(ValueError):
        assemble(np.arange(5, dtype=np.int64), chunk3, initial_dim=1)


def test_serialized_layout(segment, desc3):
    data = serialize(segment)
    # header 40, dims 12 + 3 * 20, kd-tree 16 + 16 per node, records 8 + 28 per record
    assert len(data) == segment.total_length == 136 + 44 * 200
    seg_uuid, total, type_uuid = HEADER.unpack_from(data, 0)
    assert UUID(bytes=seg_uuid) == segment.segment_uuid
    assert total == len(data)
    assert UUID(bytes=type_uuid) == desc3.type_uuid
    length, dims = DIMS_HEAD.unpack_from(data, HEADER.size)
    assert (length, dims) == (72, 3)
    ordinal, lo_raw, _ = struct.unpack_from("<I8s8s", data, HEADER.size + DIMS_HEAD.size)
    assert ordinal == 0
    assert lo_raw[4:] == b"\x00" * 4
    assert serialize(segment) == data


def test_round_trip(segment, registry):
    again = deserialize(serialize(segment), registry)
    assert again.structurally_equal(segment)
    assert again.summary() == segment.summary()


def test_summary(segment):
    summary = segment.summary()
    assert summary["record_count"] == 200
    assert summary["node_count"] == 200
    assert summary["initial_dimension"] == 0
    assert [d["name"] for d in summary["dimensions"]] == ["d0", "d1", "d2"]
    assert summary["total_length"] == segment.total_length


def test_truncated_and_padded_buffers(segment, registry):
    data = serialize(segment)
    with pytest.raises(TruncatedSegmentError):
        deserialize(data[:20], registry)
    with pytest.raises(TruncatedSegmentError):
        deserialize(data[:-1], registry)
    with pytest.raises(SegmentLengthError):
        deserialize(data + b"\x00", registry)


def test_unknown_record_type(segment, ghcn_desc):
    with pytest.raises(UnknownRecordTypeError):
        deserialize(serialize(segment), registry_of(ghcn_desc))


def test_inconsistent_section_length(segment, registry):
    data = bytearray(serialize(segment))
    struct.pack_into("<Q", data, HEADER.size, 71)
    with pytest.raises(SegmentLengthError):
        deserialize(bytes(data), registry)


def test_cyclic_tree_rejected(segment, registry):
    nodes = segment.nodes.copy()
    nodes["left"][0] = 0
    broken = dataclasses.replace(segment, nodes=nodes)
    with pytest.raises(SegmentCorruptionError):
        deserialize(serialize(broken), registry)


def test_misaligned_record_offset_rejected(segment, registry):
    nodes = segment.nodes.copy()
    nodes["record_pos"][3] += 1
    broken = dataclasses.replace(segment, nodes=nodes)
    with pytest.raises(SegmentCorruptionError):
        deserialize(serialize(broken), registry)


def test_loose_bounds_rejected(segment, registry):
    lo = segment.rect.lo.copy()
    lo[1] -= 1
    rect = Hyperrectangle(lo, segment.rect.hi, segment.rect.kinds)
    loose = dataclasses.replace(segment, rect=rect)
    with pytest.raises(SegmentCorruptionError):
        deserialize(serialize(loose), registry)


@pytest.mark.parametrize("dim,slot", [(0, 0), (1, 1), (2, 0)])
def test_nonzero_bound_padding_rejected(segment, registry, dim, slot):
    data = bytearray(serialize(segment))
    # float32 bounds occupy the low 4 bytes of their 8-byte slot
    at = HEADER.size + DIMS_HEAD.size + dim * DIM_ENTRY.size + 4 + 8 * slot
    assert data[at + 4 : at + 8] == bytes(4)
    data[at + 6] = 0x5A
    with pytest.raises(SegmentCorruptionError, match="canonical"):
        deserialize(bytes(data), registry)


def test_order_violation(segment, registry):
    right = int(segment.nodes["right"][0])
    assert right != -1
    records = segment.records.copy()
    records[[0, right]] = records[[right, 0]]
    swapped = dataclasses.replace(segment, records=records)
    data = serialize(swapped)
    with pytest.raises(SegmentCorruptionError):
        deserialize(data, registry, verify_order=True)
    # structural checks alone accept the segment
    assert deserialize(data, registry, verify_order=False).record_count == 200


def test_empty_segment_rejected(desc3, registry):
    empty = dataclasses.replace(
        assemble(np.arange(1, dtype=np.int64), Chunk(np.zeros(1, dtype=desc3.dtype), desc3)),
        nodes=np.empty(0, dtype=PACKED_NODE_DTYPE),
        records=np.empty(0, dtype=desc3.dtype),
    )
    with pytest.raises(SegmentCorruptionError):
        deserialize(serialize(empty), registry)


def test_read_info_from_prefix(segment, registry):
    data = serialize(segment)
    needed = info_length(data[: HEADER.size + DIMS_HEAD.size])
    info = read_info(data[:needed], registry)
    assert info.segment_uuid == segment.segment_uuid
    assert info.rect == segment.rect
    assert info.record_count == 200
    assert info.total_length == len(data)
    seg_uuid, rect = read_bounds(data[:needed], registry)
    assert (seg_uuid, rect) == (segment.segment_uuid, segment.rect)
    with pytest.raises(TruncatedSegmentError):
        info_length(data[:10])


def test_segments_get_fresh_identifiers(chunk3):
    group = np.arange(10, dtype=np.int64)
    a = assemble(group, chunk3)
    b = assemble(group, chunk3)
    assert a.segment_uuid != b.segment_uuid
