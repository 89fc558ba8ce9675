# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Tests for the record model: descriptors, CSV encoding and dimension values."""

import struct

import numpy as np
import pytest
from pydantic import ValidationError

from mdstore.exceptions import DescriptorError, DimensionError, RecordEncodingError
from mdstore.record import (
    CsvRecordEncoder,
    DimValue,
    FieldType,
    Ordering,
    RecordDescriptor,
    compare_dim,
    encode_csv_row,
    extract_dim,
    keys_to_values,
    load_descriptor,
    order_keys,
    parse_descriptor,
    parse_epoch,
)

TWO_FIELDS = """
<description typeid="{typeid}">
 <struct>
  <field name="a" type="{a_type}"/>
  <field name="b" type="int64"/>
 </struct>
 <indexing-dimensions>
  <field name="a"/>
  <field name="b"/>
 </indexing-dimensions>
</description>
"""


def test_nyc_descriptor(nyc_desc):
    """Bundled taxi descriptor, with its unquoted attributes and C type names."""
    assert len(nyc_desc.fields) == 14
    assert nyc_desc.indexing_dims == (
        "pickup_latitude",
        "pickup_longitude",
        "pickup_datetime",
        "passenger_count",
        "trip_time_in_secs",
    )
    assert nyc_desc.record_size == 132
    assert nyc_desc.dtype.itemsize == 132
    assert nyc_desc.field("medallion").array_len == 33
    assert nyc_desc.field("pickup_datetime").field_type is FieldType.EPOCH


def test_ghcn_descriptor(ghcn_desc):
    assert len(ghcn_desc.fields) == 7
    assert ghcn_desc.dims == 6
    assert ghcn_desc.record_size == 40
    assert ghcn_desc.dim_field_ordinals == (5, 3, 2, 4, 6, 0)


def test_offsets_are_prefix_sums(nyc_desc):
    widths = [f.width for f in nyc_desc.fields]
    assert list(nyc_desc.offsets) == list(np.cumsum([0] + widths[:-1]))


def test_parse_is_deterministic(nyc_desc):
    again = load_descriptor("nyc")
    assert again == nyc_desc
    assert again.type_uuid == nyc_desc.type_uuid


def test_explicit_typeid_is_kept():
    xml_text = TWO_FIELDS.format(typeid="12345678-1234-5678-1234-567812345678", a_type="float")
    desc = parse_descriptor(xml_text)
    assert str(desc.type_uuid) == "12345678-1234-5678-1234-567812345678"


def test_to_xml_round_trip(ghcn_desc):
    assert parse_descriptor(ghcn_desc.to_xml()) == ghcn_desc


@pytest.mark.parametrize(
    "xml_text,message",
    [
        ("<description><struct>", "Malformed"),
        (TWO_FIELDS.format(typeid="...", a_type="double"), "Unknown field type"),
        (TWO_FIELDS.format(typeid="...", a_type="char"), "array_len"),
        (
            """<description><struct><field name="a" type="int64"/></struct>
            <indexing-dimensions><field name="a"/><field name="a"/></indexing-dimensions>
            </description>""",
            "at least 2 fields",
        ),
        (
            """<description><struct><field name="a" type="int64"/>
            <field name="a" type="int64"/></struct>
            <indexing-dimensions><field name="a"/></indexing-dimensions></description>""",
            "Duplicate field",
        ),
        (
            """<description><struct><field name="a" type="int64"/>
            <field name="s" type="char" array_len="3"/></struct>
            <indexing-dimensions><field name="a"/><field name="s"/></indexing-dimensions>
            </description>""",
            "numerical type",
        ),
        (
            """<description><struct><field name="a" type="int64"/>
            <field name="b" type="int64"/></struct>
            <indexing-dimensions><field name="a"/><field name="c"/></indexing-dimensions>
            </description>""",
            "not a field",
        ),
    ],
)
def test_invalid_descriptors(xml_text, message):
    with pytest.raises(DescriptorError) as exc_info:
        parse_descriptor(xml_text)
    assert message in str(exc_info.value)


def test_schema_checked_on_direct_construction(nyc_desc):
    fields = nyc_desc.fields[:2]
    with pytest.raises(ValidationError, match="not a field"):
        RecordDescriptor(
            type_uuid=nyc_desc.type_uuid, fields=fields, indexing_dims=("c", "medallion")
        )
    with pytest.raises(ValidationError, match="Duplicate field"):
        RecordDescriptor(
            type_uuid=nyc_desc.type_uuid,
            fields=(nyc_desc.fields[5], nyc_desc.fields[5]),
            indexing_dims=(nyc_desc.fields[5].name, nyc_desc.fields[5].name),
        )


def test_equal_descriptors_share_a_hash():
    xml_text = TWO_FIELDS.format(typeid="...", a_type="float")
    first, second = parse_descriptor(xml_text), parse_descriptor(xml_text)
    # derived layouts are cached on first use and must not affect equality
    assert first.record_struct.size == first.record_size == 12
    assert first == second
    assert hash(first) == hash(second)
    assert len({first, second}) == 1
    assert first != parse_descriptor(TWO_FIELDS.format(typeid="...", a_type="int64"))


def test_missing_descriptor_file(tmp_path):
    with pytest.raises(DescriptorError):
        load_descriptor(str(tmp_path / "missing.xml"))


def test_encode_pads_char_arrays():
    desc = parse_descriptor(
        """<description><struct>
        <field name="s" type="char" array_len="3"/>
        <field name="x" type="float"/>
        <field name="u" type="uint32"/>
        </struct><indexing-dimensions><field name="x"/><field name="u"/>
        </indexing-dimensions></description>"""
    )
    record = encode_csv_row(["ab", "3.5", "7"], desc)
    assert len(record) == desc.record_size == 11
    assert record[:3] == b"ab\x00"
    assert record[3:7] == bytes([0x00, 0x00, 0x60, 0x40])
    assert struct.unpack_from("<I", record, 7)[0] == 7


def test_encode_truncates_and_counts():
    desc = parse_descriptor(
        """<description><struct>
        <field name="s" type="char" array_len="2"/>
        <field name="x" type="int64"/><field name="y" type="int64"/>
        </struct><indexing-dimensions><field name="x"/><field name="y"/>
        </indexing-dimensions></description>"""
    )
    encoder = CsvRecordEncoder(desc)
    record = encoder.encode(["abcdef", "1", "2"])
    assert record[:2] == b"ab"
    assert encoder.truncated_cells == 1


@pytest.mark.parametrize(
    "row",
    [
        ["1", "2"],
        ["x", "1.0", "-1"],
        ["x", "abc", "1"],
        ["x", "nan", "1"],
        ["x", "1.0", "4294967296"],
    ],
)
def test_encode_errors(row):
    desc = parse_descriptor(
        """<description><struct>
        <field name="s" type="char" array_len="2"/>
        <field name="x" type="float"/><field name="u" type="uint32"/>
        </struct><indexing-dimensions><field name="x"/><field name="u"/>
        </indexing-dimensions></description>"""
    )
    with pytest.raises(RecordEncodingError):
        encode_csv_row(row, desc)


def test_encode_decode_identity(ghcn_desc):
    row = ["1388534400", "USW00094728", "-73.9667", "40.7833", "39.6", "1465135408", "250"]
    record = encode_csv_row(row, ghcn_desc)
    decoded = ghcn_desc.frombuffer(record)[0]
    assert decoded["time"] == 1388534400
    assert decoded["station"] == b"USW00094728"
    assert decoded["longitude"] == np.float32(-73.9667)
    assert decoded["element_id"] == 1465135408


def test_epoch_accepts_iso_timestamps(ghcn_desc):
    assert parse_epoch("2014-01-01T00:00:00Z") == 1388534400
    assert parse_epoch("2014-01-01 00:00:00") == 1388534400
    row = ["2014-01-01T00:00:00", "S", "0", "0", "0", "1", "1"]
    assert ghcn_desc.frombuffer(encode_csv_row(row, ghcn_desc))[0]["time"] == 1388534400


def test_extract_dim(nyc_desc, ghcn_desc):
    record = np.zeros(1, dtype=nyc_desc.dtype)
    record["pickup_latitude"] = 40.75
    value = extract_dim(record.tobytes(), nyc_desc, 0)
    assert value == DimValue(40.75, FieldType.FLOAT32)

    ghcn = np.zeros(1, dtype=ghcn_desc.dtype)
    ghcn["time"] = 1_400_000_000
    expected = DimValue(1_400_000_000, FieldType.EPOCH)
    assert extract_dim(ghcn.tobytes(), ghcn_desc, 5) == expected

    with pytest.raises(DimensionError):
        extract_dim(record.tobytes(), nyc_desc, 6)
    with pytest.raises(RecordEncodingError):
        extract_dim(record.tobytes()[:-1], nyc_desc, 0)


def test_compare_dim():
    assert compare_dim(DimValue(3, FieldType.INT64), DimValue(7, FieldType.INT64)) is (
        Ordering.LESS
    )
    assert compare_dim(DimValue(2.0, FieldType.FLOAT32), DimValue(2.0, FieldType.FLOAT32)) is (
        Ordering.EQUAL
    )
    with pytest.raises(DimensionError):
        compare_dim(DimValue(5, FieldType.UINT32), DimValue(5, FieldType.INT64))


def test_dim_value_raw_is_eight_bytes():
    value = DimValue(3.5, FieldType.FLOAT32)
    assert value.raw == bytes([0x00, 0x00, 0x60, 0x40, 0, 0, 0, 0])
    assert DimValue.from_raw(value.raw, FieldType.FLOAT32) == value


def test_float_order_keys_preserve_order():
    values = np.array(
        [-np.inf, -1e30, -2.5, -1e-40, -0.0, 0.0, 1e-40, 1.0, 2.5, 3e38, np.inf],
        dtype=np.float32,
    )
    keys = order_keys(values, FieldType.FLOAT32)
    assert np.all(np.diff(keys) >= 0)
    # -0.0 and +0.0 share a key
    assert keys[4] == keys[5] == 0
    back = keys_to_values(keys, FieldType.FLOAT32)
    assert np.array_equal(back, values)


def test_check_dims_rejects_nan(desc3):
    records = np.zeros(3, dtype=desc3.dtype)
    records["d1"][2] = np.nan
    with pytest.raises(RecordEncodingError):
        desc3.check_dims(records)
