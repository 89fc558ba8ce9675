# --------------------------------------------------------------------------------------
# Part of the mdstore project.
#
# Record model: XML record descriptors, the fixed-width little-endian record layout,
# CSV row encoding and indexing-dimension access.
# --------------------------------------------------------------------------------------

"""Record descriptors and fixed-width binary records.

Every indexing-dimension value also has an *order key*: a signed 64-bit integer that
preserves the total order of the value's kind. Integer kinds map to themselves, float32
values map through their IEEE-754 bit pattern. Trees and hyperrectangles compare order
keys, which is exact for every kind.
"""

import logging
import re
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple
from uuid import UUID, uuid5

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .constants import BUNDLED_DESCRIPTORS, DESCRIPTOR_NAMESPACE
from .exceptions import DescriptorError, DimensionError, RecordEncodingError

py_logger = logging.getLogger(__name__)

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
UINT32_MAX = (1 << 32) - 1


class FieldType(str, Enum):
    """Field types of a record descriptor."""

    CHAR_ARRAY = "char_array"
    INT64 = "int64"
    UINT32 = "uint32"
    FLOAT32 = "float32"
    EPOCH = "epoch"

    @classmethod
    def parse(cls, text: str) -> "FieldType":
        """Resolve a canonical type name or one of the C-style spellings."""
        try:
            return _TYPE_ALIASES[text.strip()]
        except KeyError:
            raise DescriptorError(
                f"Unknown field type '{text}'. Supported types are "
                f"{', '.join(sorted(_TYPE_ALIASES))}."
            )

    @property
    def is_numeric(self) -> bool:
        return self is not FieldType.CHAR_ARRAY

    @property
    def is_integer(self) -> bool:
        return self in (FieldType.INT64, FieldType.UINT32, FieldType.EPOCH)

    @property
    def xml_name(self) -> str:
        return _XML_NAMES[self]


_TYPE_ALIASES: Dict[str, FieldType] = {
    **{ft.value: ft for ft in FieldType},
    "char": FieldType.CHAR_ARRAY,
    "int64_t": FieldType.INT64,
    "uint32_t": FieldType.UINT32,
    "float": FieldType.FLOAT32,
    "epoch_t": FieldType.EPOCH,
}
_XML_NAMES = {
    FieldType.CHAR_ARRAY: "char",
    FieldType.INT64: "int64_t",
    FieldType.UINT32: "uint32_t",
    FieldType.FLOAT32: "float",
    FieldType.EPOCH: "epoch_t",
}

# numpy and struct codes of the numeric kinds
_NUMPY_CODES = {
    FieldType.INT64: "<i8",
    FieldType.UINT32: "<u4",
    FieldType.FLOAT32: "<f4",
    FieldType.EPOCH: "<i8",
}
_STRUCT_CODES = {
    FieldType.INT64: "q",
    FieldType.UINT32: "I",
    FieldType.FLOAT32: "f",
    FieldType.EPOCH: "q",
}
_WIDTHS = {
    FieldType.INT64: 8,
    FieldType.UINT32: 4,
    FieldType.FLOAT32: 4,
    FieldType.EPOCH: 8,
}


class FieldSpec(BaseModel):
    """One fixed-width field of a record."""

    model_config = ConfigDict(frozen=True)

    name: str
    field_type: FieldType
    array_len: int | None = None

    @model_validator(mode="after")
    def _check_array_len(self) -> "FieldSpec":
        if not self.name.isidentifier():
            raise ValueError(f"Field name '{self.name}' is not an identifier")
        if self.field_type is FieldType.CHAR_ARRAY:
            if self.array_len is None or self.array_len < 1:
                raise ValueError(f"Field '{self.name}': char arrays need array_len >= 1")
        elif self.array_len is not None:
            raise ValueError(f"Field '{self.name}': array_len is only valid for char arrays")
        return self

    @property
    def width(self) -> int:
        if self.field_type is FieldType.CHAR_ARRAY:
            assert self.array_len is not None
            return self.array_len
        return _WIDTHS[self.field_type]

    @property
    def numpy_code(self) -> str:
        if self.field_type is FieldType.CHAR_ARRAY:
            return f"S{self.array_len}"
        return _NUMPY_CODES[self.field_type]

    @property
    def struct_code(self) -> str:
        if self.field_type is FieldType.CHAR_ARRAY:
            return f"{self.array_len}s"
        return _STRUCT_CODES[self.field_type]


def _schema_problem(fields: Sequence[FieldSpec], indexing_dims: Sequence[str]) -> str | None:
    """First inconsistency of a record schema, or None when it is valid."""
    if len(fields) < 2:
        return f"A record needs at least 2 fields, got {len(fields)}"
    names = [f.name for f in fields]
    duplicated = sorted({n for n in names if names.count(n) > 1})
    if duplicated:
        return f"Duplicate field names: {', '.join(duplicated)}"
    if len(indexing_dims) < 2:
        return f"A record needs at least 2 indexing dimensions, got {len(indexing_dims)}"
    dup_dims = sorted({d for d in indexing_dims if list(indexing_dims).count(d) > 1})
    if dup_dims:
        return f"Duplicate indexing dimensions: {', '.join(dup_dims)}"
    by_name = {f.name: f for f in fields}
    for dim in indexing_dims:
        if dim not in by_name:
            return f"Indexing dimension '{dim}' is not a field of the record"
        if not by_name[dim].field_type.is_numeric:
            return f"Indexing dimension '{dim}' must have a numerical type"
    return None


class RecordDescriptor(BaseModel):
    """Parsed record schema: ordered fields plus ordered indexing dimensions.

    Immutable after construction, so one instance can be shared by every thread.
    Equality and hashing only look at the schema, never at the derived layout.
    """

    model_config = ConfigDict(frozen=True)

    type_uuid: UUID
    fields: Tuple[FieldSpec, ...]
    indexing_dims: Tuple[str, ...]

    @model_validator(mode="after")
    def _check_schema(self) -> "RecordDescriptor":
        problem = _schema_problem(self.fields, self.indexing_dims)
        if problem is not None:
            raise ValueError(problem)
        return self

    def _schema(self) -> Tuple[UUID, Tuple[FieldSpec, ...], Tuple[str, ...]]:
        return self.type_uuid, self.fields, self.indexing_dims

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RecordDescriptor):
            return NotImplemented
        return self._schema() == other._schema()

    def __hash__(self) -> int:
        return hash(self._schema())

    @cached_property
    def offsets(self) -> Tuple[int, ...]:
        offsets, position = [], 0
        for f in self.fields:
            offsets.append(position)
            position += f.width
        return tuple(offsets)

    @cached_property
    def record_size(self) -> int:
        return sum(f.width for f in self.fields)

    @cached_property
    def dtype(self) -> np.dtype:
        """Structured numpy dtype matching the binary record layout."""
        return np.dtype([(f.name, f.numpy_code) for f in self.fields])

    @cached_property
    def record_struct(self) -> struct.Struct:
        return struct.Struct("<" + "".join(f.struct_code for f in self.fields))

    @cached_property
    def field_positions(self) -> Dict[str, int]:
        return {f.name: i for i, f in enumerate(self.fields)}

    @property
    def dims(self) -> int:
        return len(self.indexing_dims)

    @cached_property
    def dim_field_ordinals(self) -> Tuple[int, ...]:
        """Field ordinal of every indexing dimension, in dimension order."""
        return tuple(self.field_positions[d] for d in self.indexing_dims)

    @property
    def dim_kinds(self) -> Tuple[FieldType, ...]:
        return tuple(self.fields[i].field_type for i in self.dim_field_ordinals)

    def field_index(self, name: str) -> int:
        try:
            return self.field_positions[name]
        except KeyError:
            raise DimensionError(f"Unknown field '{name}'")

    def field(self, name: str) -> FieldSpec:
        return self.fields[self.field_index(name)]

    def dim_index(self, name: str) -> int | None:
        """Dimension ordinal of a field, or None when it is not an indexing dimension."""
        try:
            return self.indexing_dims.index(name)
        except ValueError:
            return None

    def frombuffer(self, buffer: Any) -> np.ndarray:
        """View a buffer of concatenated records as a structured array."""
        view = memoryview(buffer).cast("B")
        if len(view) % self.record_size:
            raise RecordEncodingError(
                f"Buffer of {len(view)} bytes is not a multiple of the record size "
                f"{self.record_size}"
            )
        return np.frombuffer(view, dtype=self.dtype)

    def dim_keys(self, records: np.ndarray) -> np.ndarray:
        """Order keys of all indexing dimensions, shape (count, dims), C-contiguous."""
        keys = np.empty((len(records), self.dims), dtype=np.int64)
        for d, (name, kind) in enumerate(zip(self.indexing_dims, self.dim_kinds)):
            keys[:, d] = order_keys(records[name], kind)
        return keys

    def check_dims(self, records: np.ndarray) -> None:
        """Reject NaN values in float32 indexing dimensions."""
        for name, kind in zip(self.indexing_dims, self.dim_kinds):
            if kind is FieldType.FLOAT32:
                nan_rows = np.flatnonzero(np.isnan(records[name]))
                if nan_rows.size:
                    raise RecordEncodingError(
                        f"NaN in indexing dimension '{name}' "
                        f"({nan_rows.size} records, first at index {int(nan_rows[0])})"
                    )

    def to_xml(self) -> str:
        """Render the descriptor in the XML format accepted by :func:`parse_descriptor`."""
        root = ET.Element("description", typeid=str(self.type_uuid))
        struct_el = ET.SubElement(root, "struct")
        for f in self.fields:
            attrs = {"name": f.name, "type": f.field_type.xml_name}
            if f.array_len is not None:
                attrs["array_len"] = str(f.array_len)
            ET.SubElement(struct_el, "field", attrs)
        dims_el = ET.SubElement(root, "indexing-dimensions")
        for d in self.indexing_dims:
            ET.SubElement(dims_el, "field", name=d)
        ET.indent(root)
        return '<?xml version="1.0"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


# Attribute values printed without quotes, e.g. array_len=33
_UNQUOTED_ATTR = re.compile(r"""(\s[\w.-]+)=([^\s"'<>/=]+)""")


def _normalize_xml(xml_text: str) -> str:
    return _UNQUOTED_ATTR.sub(r'\1="\2"', xml_text)


def _placeholder_uuid(fields: Sequence[FieldSpec], dims: Sequence[str]) -> UUID:
    signature = ";".join(
        f"{f.name}:{f.field_type.value}:{f.array_len or 0}" for f in fields
    ) + "|" + ",".join(dims)
    return uuid5(DESCRIPTOR_NAMESPACE, signature)


def parse_descriptor(xml_text: str) -> RecordDescriptor:
    """Parse an XML record descriptor.

    The ``typeid`` attribute must be a UUID; a missing or placeholder value is replaced
    by a deterministic identifier derived from the field list.

    Raises:
        DescriptorError: on malformed XML or an inconsistent schema.
    """
    try:
        root = ET.fromstring(_normalize_xml(xml_text).encode("utf-8"))
    except ET.ParseError as exc:
        raise DescriptorError(f"Malformed descriptor XML: {exc}")

    if root.tag != "description":
        raise DescriptorError(f"Expected a <description> root element, found <{root.tag}>")
    struct_el = root.find("struct")
    if struct_el is None:
        raise DescriptorError("Descriptor has no <struct> element")
    dims_el = root.find("indexing-dimensions")
    if dims_el is None:
        raise DescriptorError("Descriptor has no <indexing-dimensions> element")

    fields: List[FieldSpec] = []
    for el in struct_el.findall("field"):
        name, type_name = el.get("name"), el.get("type")
        if not name or not type_name:
            raise DescriptorError("Every <field> in <struct> needs a name and a type")
        field_type = FieldType.parse(type_name)
        array_len = el.get("array_len")
        try:
            fields.append(
                FieldSpec(
                    name=name,
                    field_type=field_type,
                    array_len=int(array_len) if array_len is not None else None,
                )
            )
        except ValueError as exc:
            raise DescriptorError(f"Invalid field '{name}': {exc}")

    dims = []
    for el in dims_el.findall("field"):
        name = el.get("name")
        if not name:
            raise DescriptorError("Every <field> in <indexing-dimensions> needs a name")
        dims.append(name)

    type_id = (root.get("typeid") or "").strip()
    try:
        type_uuid = UUID(type_id)
    except ValueError:
        type_uuid = _placeholder_uuid(fields, dims)

    problem = _schema_problem(fields, dims)
    if problem is not None:
        raise DescriptorError(f"Invalid record descriptor: {problem}")
    try:
        return RecordDescriptor(
            type_uuid=type_uuid, fields=tuple(fields), indexing_dims=tuple(dims)
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise DescriptorError(f"Invalid record descriptor: {exc}") from exc


def bundled_descriptor_xml(name: str) -> str:
    """XML text of a descriptor shipped with the package ('nyc' or 'ghcn')."""
    try:
        file_name = BUNDLED_DESCRIPTORS[name]
    except KeyError:
        raise DescriptorError(
            f"Unknown bundled descriptor '{name}'. "
            f"Available: {', '.join(sorted(BUNDLED_DESCRIPTORS))}."
        )
    return resources.files("mdstore").joinpath("descriptors", file_name).read_text("utf-8")


def load_descriptor(source: str | Path) -> RecordDescriptor:
    """Descriptor from a bundled short name or an XML file path."""
    if isinstance(source, str) and source in BUNDLED_DESCRIPTORS:
        return parse_descriptor(bundled_descriptor_xml(source))
    path = Path(source)
    try:
        xml_text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DescriptorError(f"Cannot read descriptor '{path}': {exc}") from exc
    return parse_descriptor(xml_text)


def order_keys(values: np.ndarray, kind: FieldType) -> np.ndarray:
    """Map numeric values of one kind to order-preserving int64 keys."""
    if kind is FieldType.FLOAT32:
        bits = np.ascontiguousarray(values, dtype="<f4").view("<i4").astype(np.int64)
        magnitude = bits & 0x7FFFFFFF
        return np.where(bits < 0, -magnitude, magnitude)
    if not kind.is_numeric:
        raise DimensionError("char arrays have no order keys")
    return np.asarray(values).astype(np.int64)


def keys_to_values(keys: np.ndarray, kind: FieldType) -> np.ndarray:
    """Inverse of :func:`order_keys` (negative zero comes back as zero)."""
    keys = np.asarray(keys, dtype=np.int64)
    if kind is FieldType.FLOAT32:
        bits = np.where(keys >= 0, keys, (-keys) | 0x80000000).astype(np.uint32)
        return bits.view("<f4")
    return keys.astype(_NUMPY_CODES[kind])


def keys_to_float(keys: np.ndarray, kind: FieldType) -> np.ndarray:
    """Decode order keys to float64 values, for geometric measures."""
    return keys_to_values(keys, kind).astype(np.float64)


class Ordering(Enum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


@dataclass(frozen=True)
class DimValue:
    """A single indexing-dimension value together with its kind."""

    value: int | float
    kind: FieldType

    def __post_init__(self) -> None:
        if not self.kind.is_numeric:
            raise DimensionError("Dimension values must have a numerical kind")
        if self.kind is FieldType.FLOAT32:
            object.__setattr__(self, "value", float(np.float32(self.value)))
        else:
            object.__setattr__(self, "value", int(self.value))

    @property
    def raw(self) -> bytes:
        """Little-endian encoding, zero-extended to 8 bytes."""
        return struct.pack("<" + _STRUCT_CODES[self.kind], self.value).ljust(8, b"\x00")

    @property
    def key(self) -> int:
        return int(order_keys(np.array([self.value]), self.kind)[0])

    @classmethod
    def from_raw(cls, raw: bytes, kind: FieldType) -> "DimValue":
        (value,) = struct.unpack_from("<" + _STRUCT_CODES[kind], raw)
        return cls(value, kind)

    @classmethod
    def from_key(cls, key: int, kind: FieldType) -> "DimValue":
        return cls(keys_to_values(np.array([key]), kind)[0].item(), kind)


def compare_dim(a: DimValue, b: DimValue) -> Ordering:
    """Total order of two values of the same kind."""
    if a.kind is not b.kind:
        raise DimensionError(f"Cannot compare a {a.kind.value} with a {b.kind.value}")
    if a.value < b.value:
        return Ordering.LESS
    if a.value > b.value:
        return Ordering.GREATER
    return Ordering.EQUAL


def extract_dim(record: bytes, desc: RecordDescriptor, dim_index: int) -> DimValue:
    """Decode one indexing-dimension value of a binary record."""
    if not 0 <= dim_index < desc.dims:
        raise DimensionError(
            f"Dimension index {dim_index} out of range for {desc.dims} indexing dimensions"
        )
    if len(record) != desc.record_size:
        raise RecordEncodingError(
            f"Record has {len(record)} bytes, expected {desc.record_size}"
        )
    ordinal = desc.dim_field_ordinals[dim_index]
    kind = desc.fields[ordinal].field_type
    (value,) = struct.unpack_from("<" + _STRUCT_CODES[kind], record, desc.offsets[ordinal])
    return DimValue(value, kind)


def decode_record(record: bytes, desc: RecordDescriptor) -> Tuple[Any, ...]:
    """Field-wise decode of a binary record. char arrays keep their raw padded bytes."""
    return desc.record_struct.unpack(record)


def parse_epoch(cell: str) -> int:
    """Epoch seconds from an integer or an ISO-8601 timestamp (naive means UTC)."""
    text = cell.strip()
    try:
        return int(text)
    except ValueError:
        pass
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    moment = datetime.fromisoformat(text)
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return int(moment.timestamp())


class CsvRecordEncoder:
    """Encodes CSV rows into binary records of one descriptor.

    char cells longer than their array are truncated, and counted in
    ``truncated_cells``.
    """

    def __init__(self, desc: RecordDescriptor) -> None:
        self.desc = desc
        self.truncated_cells = 0
        self._dim_fields = set(desc.dim_field_ordinals)

    def _cell(self, index: int, spec: FieldSpec, cell: str) -> Any:
        kind = spec.field_type
        if kind is FieldType.CHAR_ARRAY:
            raw = cell.encode("utf-8")
            assert spec.array_len is not None
            if len(raw) > spec.array_len:
                self.truncated_cells += 1
            return raw
        if kind is FieldType.FLOAT32:
            value = float(cell)
            if index in self._dim_fields and value != value:
                raise RecordEncodingError(f"NaN in indexing dimension '{spec.name}'")
            return value
        if kind is FieldType.EPOCH:
            value = parse_epoch(cell)
        else:
            value = int(cell.strip())
        low, high = (0, UINT32_MAX) if kind is FieldType.UINT32 else (INT64_MIN, INT64_MAX)
        if not low <= value <= high:
            raise RecordEncodingError(
                f"Value {value} out of range for {kind.value} field '{spec.name}'"
            )
        return value

    def encode(self, row: Sequence[str]) -> bytes:
        fields = self.desc.fields
        if len(row) != len(fields):
            raise RecordEncodingError(f"Row has {len(row)} cells, expected {len(fields)}")
        values = []
        for i, (spec, cell) in enumerate(zip(fields, row)):
            try:
                values.append(self._cell(i, spec, cell))
            except ValueError as exc:
                raise RecordEncodingError(
                    f"Cannot parse '{cell}' as {spec.field_type.value} for field '{spec.name}'"
                ) from exc
        try:
            return self.desc.record_struct.pack(*values)
        except (struct.error, OverflowError) as exc:
            raise RecordEncodingError(f"Cannot encode row: {exc}") from exc


def encode_csv_row(row: Sequence[str], desc: RecordDescriptor) -> bytes:
    """Encode one CSV row into a fixed-width little-endian record."""
    return CsvRecordEncoder(desc).encode(row)
