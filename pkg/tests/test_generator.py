# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

import numpy as np
import pandas as pd
import pytest

from mdstore.generator import (
    VALUE_RANGES,
    Distribution,
    generate_records,
    synthetic_descriptor,
    to_frame,
    write_binary,
    write_csv,
)
from mdstore.record import CsvRecordEncoder, FieldType


def test_synthetic_descriptor():
    desc = synthetic_descriptor(4, kind=FieldType.UINT32, label_len=3)
    assert desc.indexing_dims == ("d0", "d1", "d2", "d3")
    assert [f.name for f in desc.fields] == ["d0", "d1", "d2", "d3", "id", "label"]
    assert desc.record_size == 4 * 4 + 8 + 3
    assert synthetic_descriptor(3) == synthetic_descriptor(3)


def test_seeded_records_are_reproducible(desc3):
    a = generate_records(desc3, 500, seed=1)
    b = generate_records(desc3, 500, seed=1)
    c = generate_records(desc3, 500, seed=2)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()
    assert a["id"].tolist() == list(range(500))


@pytest.mark.parametrize("distribution", list(Distribution))
@pytest.mark.parametrize(
    "kind", [FieldType.FLOAT32, FieldType.INT64, FieldType.UINT32, FieldType.EPOCH]
)
def test_values_stay_in_range(kind, distribution):
    desc = synthetic_descriptor(2, kind=kind)
    records = generate_records(desc, 2_000, distribution, seed=0)
    low, high = VALUE_RANGES[kind]
    for name in ("d0", "d1"):
        assert records[name].min() >= low
        assert records[name].max() < high


def test_clustered_is_concentrated(desc3):
    uniform = generate_records(desc3, 5_000, "uniform", seed=0)
    clustered = generate_records(desc3, 5_000, "clustered", seed=0, clusters=2)
    # two tight clusters leave most of each axis empty
    occupied = len(np.unique(np.floor(clustered["d0"] / 100)))
    assert occupied < len(np.unique(np.floor(uniform["d0"] / 100)))


def test_labels(desc3):
    labels = generate_records(desc3, 100, seed=0)["label"]
    assert all(len(label) == 8 for label in labels)
    assert all(label.isalnum() and label.upper() == label for label in labels)


def test_write_binary(tmp_path, desc3, records3):
    path = write_binary(records3, tmp_path / "out" / "records.bin")
    assert path.stat().st_size == 2_000 * desc3.record_size
    assert np.fromfile(path, dtype=desc3.dtype).tobytes() == records3.tobytes()


def test_write_csv_reads_back_exactly(tmp_path, desc3, records3):
    path = write_csv(records3[:200], desc3, tmp_path / "records.csv")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    assert list(frame.columns) == ["d0", "d1", "d2", "id", "label"]
    encoder = CsvRecordEncoder(desc3)
    encoded = b"".join(encoder.encode(row) for row in frame.itertuples(index=False))
    assert encoded == records3[:200].tobytes()


def test_to_frame_decodes_text(desc3, records3):
    frame = to_frame(records3[:5], desc3)
    assert frame["label"].map(type).eq(str).all()
    assert frame["id"].tolist() == [0, 1, 2, 3, 4]
