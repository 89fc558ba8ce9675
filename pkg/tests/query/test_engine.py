# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Query execution against a populated store, checked with full scans and pandas."""

import numpy as np
import pandas as pd
import pytest

from mdstore.exceptions import InvalidStateError
from mdstore.generator import generate_records
from mdstore.segment import Hyperrectangle

RANGE = "where d0 >= -200.0 and d0 < 400.0 and d1 in [-1000.0, 0.0]"


@pytest.fixture
def populated(open_store, desc3):
    records = generate_records(desc3, 3_000, seed=11)
    store = open_store(desc3)
    store.ingest_records(records)
    return store, records


@pytest.fixture
def small_ints(open_store, int_desc):
    rng = np.random.default_rng(5)
    records = np.zeros(400, dtype=int_desc.dtype)
    records["d0"] = rng.integers(0, 10, size=400)
    records["d1"] = rng.integers(0, 10, size=400)
    records["id"] = np.arange(400)
    store = open_store(int_desc)
    store.ingest_records(records)
    return store, records


def _matching(store, text, records, brute_force):
    lo, hi = store.parse(text).key_bounds(store.desc)
    return brute_force(records, store.desc, lo, hi)


@pytest.mark.parametrize("iterator", ["kd", "seq"])
def test_count_matches_full_scan(populated, brute_force, iterator):
    store, records = populated
    expected = _matching(store, f"count(*) {RANGE}", records, brute_force)
    result = store.query(f"count(*) {RANGE}", iterator=iterator)
    assert result.columns == ["count(*)"]
    assert result.value == len(expected) > 0
    assert store.query("count(*)").value == 3_000


def test_range_records(populated, brute_force, as_sorted_bytes):
    store, records = populated
    expected = _matching(store, RANGE, records, brute_force)
    with store.open_cursor(RANGE) as cursor:
        found = cursor.fetch_all()
    assert as_sorted_bytes(found) == as_sorted_bytes(expected)


def test_aggregates(populated, brute_force):
    store, records = populated
    values = _matching(store, RANGE, records, brute_force)["d2"]
    avg = store.query(f"avg(d2) {RANGE}")
    assert avg.columns == ["avg(d2)"]
    assert avg.value == pytest.approx(np.sum(values, dtype=np.float64) / len(values))
    assert store.query(f"min(d2) {RANGE}").value == float(values.min())
    assert store.query(f"max(d2) {RANGE}").value == float(values.max())


def test_scaled_aggregate(populated, brute_force):
    store, records = populated
    values = _matching(store, RANGE, records, brute_force)["d2"]
    result = store.query(f"max(d2) / 10 {RANGE}")
    assert result.columns == ["max(d2)/10"]
    assert result.value == pytest.approx(float(values.max()) / 10)
    assert store.query("count(*) / 1000").value == pytest.approx(3.0)


def test_aggregates_over_nothing(populated):
    store, _ = populated
    nothing = "where d0 > 5000.0"
    assert store.query(f"count(*) {nothing}").value == 0
    for aggregate in ("avg", "min", "max"):
        result = store.query(f"{aggregate}(d1) {nothing}")
        assert result.rows == []
        assert result.value is None


def test_empty_interval_inspects_no_segment(populated):
    store, _ = populated
    result = store.query("count(*) where d0 > 1.0 and d0 < 1.0")
    assert result.value == 0
    assert result.segments_inspected == 0
    assert result.records_visited == 0


def test_segments_inspected_equals_overlapping_segments(populated):
    store, _ = populated
    text = f"count(*) {RANGE}"
    lo, hi = store.parse(text).key_bounds(store.desc)
    rect = Hyperrectangle(lo, hi, store.desc.dim_kinds)
    overlapping = sum(ref.rect.intersects(rect) for ref in store.references())
    result = store.query(text)
    assert result.segments_inspected == overlapping
    assert 0 < overlapping < store.segment_count


def test_kd_visits_no_more_than_sequential(populated):
    store, _ = populated
    text = "count(*) where d0 in [0.0, 50.0] and d1 in [0.0, 50.0]"
    kd = store.query(text, iterator="kd")
    seq = store.query(text, iterator="seq")
    assert kd.value == seq.value
    assert kd.segments_inspected == seq.segments_inspected
    assert kd.records_visited <= seq.records_visited


def test_projection_order_and_limit(populated, brute_force):
    store, records = populated
    text = f"id, d0 {RANGE} order by d0 desc limit 5"
    frame = pd.DataFrame(_matching(store, RANGE, records, brute_force)[["id", "d0"]])
    expected = frame.sort_values("d0", ascending=False, kind="stable").head(5)
    result = store.query(text)
    assert result.columns == ["id", "d0"]
    assert [row[0] for row in result.rows] == expected["id"].tolist()
    assert all(isinstance(row[0], int) for row in result.rows)
    assert result.to_frame().shape == (5, 2)


def test_distinct(small_ints):
    store, records = small_ints
    result = store.query("distinct d0 where d1 <= 4 order by d0")
    expected = sorted(set(records["d0"][records["d1"] <= 4].tolist()))
    assert [row[0] for row in result.rows] == expected
    assert result.to_records()[0] == {"d0": expected[0]}


def test_select_all_decodes_text(populated):
    store, records = populated
    result = store.query("* where d0 >= 0 order by id limit 3")
    assert result.columns == list(store.desc.dtype.names)
    first = result.to_records()[0]
    expected = records[records["d0"] >= 0][0]
    assert first["id"] == expected["id"]
    assert first["label"] == expected["label"].decode()


def test_cursor_snapshot(populated, desc3):
    store, _ = populated
    cursor = store.open_cursor("count(*)")
    store.ingest_records(generate_records(desc3, 500, seed=12))
    assert sum(len(batch) for batch in cursor.batches()) == 3_000
    assert store.query("count(*)").value == 3_500


def test_cursor_close(populated):
    store, _ = populated
    cursor = store.open_cursor("*")
    batches = cursor.batches()
    next(batches)
    cursor.close()
    assert cursor.closed
    assert list(batches) == []
    assert cursor.segments_inspected == 1
    with pytest.raises(InvalidStateError):
        next(cursor.batches())


def test_cursor_pins_one_segment_at_a_time(populated, mocker):
    store, _ = populated
    refs = store.references()
    pinned_before_get = []
    real_get = store.cache.get

    def counting_get(ref):
        pinned_before_get.append(sum(r.usage_count for r in refs))
        return real_get(ref)

    mocker.patch.object(store.cache, "get", side_effect=counting_get)
    cursor = store.open_cursor("*")
    # opening does not acquire anything
    assert sum(r.usage_count for r in refs) == 0
    for _ in cursor.batches():
        assert sum(r.usage_count for r in refs) == 0
    assert len(pinned_before_get) == len(refs) > 1
    assert set(pinned_before_get) == {0}


def test_query_on_empty_store(open_store, desc3):
    store = open_store(desc3)
    result = store.query("count(*) where d0 > 0")
    assert result.value == 0
    assert result.segments_inspected == 0
    assert store.query("avg(d0)").rows == []


def test_concurrent_queries(populated):
    store, _ = populated
    texts = [
        f"count(*) {RANGE}",
        "avg(d1) where d2 >= 0",
        "max(d0)",
        "count(*) where d0 in [-1000.0, 0.0]",
    ] * 3
    expected = [store.query(text).rows for text in texts]
    results = store.run_queries(texts)
    assert [r.rows for r in results] == expected
    assert [r.query for r in results] == texts
