# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Tests for the range-query language."""

import numpy as np
import pytest

from mdstore.exceptions import QuerySyntaxError, QueryValidationError
from mdstore.query import Aggregate, Bound, DimRange, parse_query
from mdstore.record import INT64_MAX, INT64_MIN, FieldType, order_keys


def test_average_query_on_taxi_data(nyc_desc):
    q = parse_query(
        "avg(passenger_count) where pickup_latitude in [40.76,40.78] "
        "and pickup_longitude in [-73.89,-73.88]",
        nyc_desc,
    )
    assert q.aggregate is Aggregate.AVG
    assert q.aggregate_field == "passenger_count"
    assert set(q.ranges) == {"pickup_latitude", "pickup_longitude"}
    assert q.ranges["pickup_latitude"] == DimRange(Bound(40.76), Bound(40.78))
    assert q.is_aggregate


def test_equality_is_a_degenerate_range(ghcn_desc):
    q = parse_query(
        "count(*) where element_id = 1465135408 and latitude >= 40 and latitude < 41",
        ghcn_desc,
    )
    assert q.aggregate is Aggregate.COUNT_ALL
    assert q.ranges["element_id"] == DimRange(Bound(1465135408), Bound(1465135408))
    assert q.ranges["latitude"] == DimRange(Bound(40), Bound(41, inclusive=False))


def test_scaled_aggregate(ghcn_desc):
    q = parse_query("MAX(element_value) / 10.0 WHERE elevation > 100", ghcn_desc)
    assert q.aggregate is Aggregate.MAX
    assert q.scale == 10.0
    assert q.ranges["elevation"] == DimRange(low=Bound(100, inclusive=False))


def test_distinct_projection(ghcn_desc):
    q = parse_query(
        "distinct station, elevation where time >= '2014-01-01T00:00:00Z' "
        "order by elevation desc limit 3",
        ghcn_desc,
    )
    assert q.distinct
    assert q.projection == ("station", "elevation")
    assert q.order_by == ("elevation", True)
    assert q.limit == 3
    assert q.ranges["time"] == DimRange(low=Bound(1388534400))


def test_select_all_forms(desc3):
    for text in ("*", "* where d0 > 0", "where d0 > 0", "limit 5"):
        q = parse_query(text, desc3)
        assert q.projection is None
        assert not q.is_aggregate


def test_predicates_on_one_dimension_intersect(desc3):
    q = parse_query("count(*) where d0 >= 1 and d0 < 10 and d0 > 1 and d0 <= 20", desc3)
    assert q.ranges["d0"] == DimRange(Bound(1, inclusive=False), Bound(10, inclusive=False))


@pytest.mark.parametrize(
    "text,position",
    [
        ("", 0),
        ("   ", 0),
        ("count(*) where", 14),
        ("count(*) where d0 in [1, 2", 26),
        ("count(*) where d0 ~ 1", 18),
        ("count(*) where d0 in {1, 2}", 21),
        ("avg(d0) extra", 8),
        ("count(*) where d0 > 1 limit 2.5", 28),
        ("distinct where d0 > 1", 9),
    ],
)
def test_syntax_errors(desc3, text, position):
    with pytest.raises(QuerySyntaxError) as exc_info:
        parse_query(text, desc3)
    assert exc_info.value.position == position
    pointer = exc_info.value.pointer()
    assert pointer.splitlines()[-1] == " " * position + "^"


@pytest.mark.parametrize(
    "text",
    [
        "count(*) where label = 3",
        "count(*) where id > 3",
        "count(*) where nope > 3",
        "count(*) where d0 in [5, 1]",
        "avg(label)",
        "min(nope)",
        "count(*) / 0",
        "count(*) limit 3",
        "d0 order by d1",
        "d0, nope",
        "count(*) where d0 >= '2014-01-01'",
    ],
)
def test_validation_errors(desc3, text):
    with pytest.raises(QueryValidationError):
        parse_query(text, desc3)


def test_bound_on_char_field(nyc_desc):
    with pytest.raises(QueryValidationError):
        parse_query("count(*) where medallion = 3", nyc_desc)


def test_key_bounds_integers(int_desc):
    q = parse_query("count(*) where d0 > 2.5 and d0 <= 7.9 and d1 in (3, 5)", int_desc)
    lo, hi = q.key_bounds(int_desc)
    assert lo.tolist() == [3, 4]
    assert hi.tolist() == [7, 4]


def test_key_bounds_unbounded_dimension(desc3):
    lo, hi = parse_query("count(*) where d1 >= 0", desc3).key_bounds(desc3)
    assert lo[0] == INT64_MIN and hi[0] == INT64_MAX
    assert lo[1] == 0 and hi[1] == INT64_MAX


def test_key_bounds_float_exclusive(desc3):
    q = parse_query("count(*) where d0 > 1.0 and d0 < 2.0", desc3)
    lo, hi = q.key_bounds(desc3)
    one, two = (
        int(k) for k in order_keys(np.array([1.0, 2.0], dtype=np.float32), FieldType.FLOAT32)
    )
    assert lo[0] == one + 1
    assert hi[0] == two - 1


def test_key_bounds_float_rounding(desc3):
    # float32(0.1) lies above 0.1 and float32(0.2) above 0.2
    tenth, fifth = order_keys(np.array([0.1, 0.2], dtype=np.float32), FieldType.FLOAT32)
    lo, hi = parse_query("count(*) where d0 in [0.1, 0.2]", desc3).key_bounds(desc3)
    assert lo[0] == tenth
    assert hi[0] == fifth - 1
    # no float32 equals 0.1 exactly
    assert parse_query("count(*) where d0 = 0.1", desc3).key_bounds(desc3) is None
    assert parse_query("count(*) where d0 = 0.5", desc3).key_bounds(desc3) is not None


def test_empty_interval(desc3, int_desc):
    assert parse_query("count(*) where d0 in (1, 1)", int_desc).key_bounds(int_desc) is None
    q = parse_query("count(*) where d0 > 3 and d0 < 4", int_desc)
    assert q.key_bounds(int_desc) is None
    assert parse_query("count(*) where d2 in [1.0, 1.0]", desc3).key_bounds(desc3) is not None
