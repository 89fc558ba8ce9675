# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Seedable synthetic records for tests and benchmarks.

Numeric fields are drawn in a fixed range per kind: uniformly, or around a mixture of
Gaussian clusters in the unit cube scaled to that range. char fields get random
upper-case text.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from .record import FieldSpec, FieldType, RecordDescriptor, parse_descriptor

py_logger = logging.getLogger(__name__)

#: Half-open value range of every numeric kind
VALUE_RANGES: Dict[FieldType, Tuple[float, float]] = {
    FieldType.FLOAT32: (-1000.0, 1000.0),
    FieldType.INT64: (0, 1_000_000),
    FieldType.UINT32: (0, 1_000_000),
    # 2013-01-01 to 2014-01-01
    FieldType.EPOCH: (1_356_998_400, 1_388_534_400),
}

_ALPHABET = np.frombuffer(b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789", dtype=np.uint8)


class Distribution(str, Enum):
    UNIFORM = "uniform"
    CLUSTERED = "clustered"


def synthetic_descriptor(
    dims: int = 5, kind: FieldType = FieldType.FLOAT32, label_len: int = 8
) -> RecordDescriptor:
    """Descriptor with ``dims`` indexing dimensions ``d0..``, plus an ``id`` and a
    ``label`` field that are not indexed."""
    fields = [f'  <field name="d{i}" type="{kind.xml_name}"/>' for i in range(dims)]
    fields.append('  <field name="id" type="int64_t"/>')
    fields.append(f'  <field name="label" type="char" array_len="{label_len}"/>')
    dim_fields = [f'  <field name="d{i}"/>' for i in range(dims)]
    xml_text = "\n".join(
        [
            "<description>",
            " <struct>",
            *fields,
            " </struct>",
            " <indexing-dimensions>",
            *dim_fields,
            " </indexing-dimensions>",
            "</description>",
        ]
    )
    return parse_descriptor(xml_text)


def _scale(unit: np.ndarray, kind: FieldType) -> np.ndarray:
    low, high = VALUE_RANGES[kind]
    values = low + unit * (high - low)
    if kind is FieldType.FLOAT32:
        # float32 rounding may reach the open end
        top = np.nextafter(np.float32(high), np.float32(low))
        return np.minimum(values.astype(np.float32), top)
    return np.minimum(np.floor(values), high - 1).astype(np.int64)


def _text(rng: np.random.Generator, count: int, spec: FieldSpec) -> np.ndarray:
    assert spec.array_len is not None
    length = min(spec.array_len, 8)
    codes = rng.choice(_ALPHABET, size=(count, length))
    return np.frombuffer(codes.tobytes(), dtype=f"S{length}")


def generate_records(
    desc: RecordDescriptor,
    count: int,
    distribution: Distribution | str = Distribution.UNIFORM,
    seed: int | None = None,
    clusters: int = 10,
    cluster_std: float = 0.03,
) -> np.ndarray:
    """Structured array of ``count`` synthetic records of ``desc``.

    In clustered mode the indexing dimensions follow a mixture of ``clusters``
    Gaussians with standard deviation ``cluster_std`` in unit-cube coordinates; other
    numeric fields stay uniform. An ``int64`` field named ``id`` numbers the records.
    """
    distribution = Distribution(distribution)
    rng = np.random.default_rng(seed)
    records = np.zeros(count, dtype=desc.dtype)
    dim_names = set(desc.indexing_dims)

    if distribution is Distribution.CLUSTERED:
        centers = rng.random((clusters, desc.dims))
        members = rng.integers(0, clusters, size=count)
        unit_dims = centers[members] + rng.normal(0.0, cluster_std, size=(count, desc.dims))
        # stay inside the half-open unit cube
        unit_dims = np.clip(unit_dims, 0.0, np.nextafter(1.0, 0.0))
    else:
        unit_dims = rng.random((count, desc.dims))

    for spec in desc.fields:
        kind = spec.field_type
        if kind is FieldType.CHAR_ARRAY:
            records[spec.name] = _text(rng, count, spec)
        elif spec.name == "id" and kind is FieldType.INT64:
            records[spec.name] = np.arange(count, dtype=np.int64)
        elif spec.name in dim_names:
            d = desc.indexing_dims.index(spec.name)
            records[spec.name] = _scale(unit_dims[:, d], kind)
        else:
            records[spec.name] = _scale(rng.random(count), kind)
    py_logger.debug(f"Generated {count} {distribution.value} records")
    return records


def write_binary(records: np.ndarray, path: str | Path) -> Path:
    """Write records as concatenated fixed-width little-endian records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records.tofile(path)
    return path


def to_frame(records: np.ndarray, desc: RecordDescriptor) -> pd.DataFrame:
    """Records as a DataFrame, char fields decoded to text."""
    columns = {}
    for spec in desc.fields:
        column = records[spec.name]
        if spec.field_type is FieldType.CHAR_ARRAY:
            columns[spec.name] = [cell.decode("utf-8") for cell in column.tolist()]
        else:
            columns[spec.name] = column
    return pd.DataFrame(columns, columns=[f.name for f in desc.fields])


def write_csv(records: np.ndarray, desc: RecordDescriptor, path: str | Path) -> Path:
    """Write records as CSV with a header of field names.

    float32 values are printed with 9 significant digits, which reads back exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_frame(records, desc).to_csv(path, index=False, float_format="%.9g")
    return path
