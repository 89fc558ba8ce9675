# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

from pathlib import Path
from typing import Any, Callable, Dict, Iterator

import numpy as np
import pytest

from mdstore.config import MdstoreConfiguration
from mdstore.datastore import DataStore
from mdstore.generator import generate_records, synthetic_descriptor
from mdstore.record import FieldType, RecordDescriptor, load_descriptor
from mdstore.segmentation import Chunk


def _brute_force(records: np.ndarray, desc: RecordDescriptor, lo, hi) -> np.ndarray:
    keys = desc.dim_keys(records)
    mask = np.all((keys >= np.asarray(lo)) & (keys <= np.asarray(hi)), axis=1)
    return records[mask]


def _as_sorted_bytes(records: np.ndarray) -> list:
    return sorted(r.tobytes() for r in records)


@pytest.fixture
def brute_force() -> Callable[..., np.ndarray]:
    """Records whose order keys lie in the closed box ``[lo, hi]``, by full scan."""
    return _brute_force


@pytest.fixture
def as_sorted_bytes() -> Callable[[np.ndarray], list]:
    """Order-independent representation of a set of records."""
    return _as_sorted_bytes


@pytest.fixture
def desc3() -> RecordDescriptor:
    """Three float32 dimensions plus id and label."""
    return synthetic_descriptor(3)


@pytest.fixture
def desc5() -> RecordDescriptor:
    return synthetic_descriptor(5)


@pytest.fixture
def int_desc() -> RecordDescriptor:
    return synthetic_descriptor(2, kind=FieldType.INT64)


@pytest.fixture
def nyc_desc() -> RecordDescriptor:
    return load_descriptor("nyc")


@pytest.fixture
def ghcn_desc() -> RecordDescriptor:
    return load_descriptor("ghcn")


@pytest.fixture
def records3(desc3) -> np.ndarray:
    return generate_records(desc3, 2_000, seed=7)


@pytest.fixture
def chunk3(desc3, records3) -> Chunk:
    return Chunk(records3, desc3)


@pytest.fixture
def small_config() -> MdstoreConfiguration:
    """Small segments and chunks so that a few thousand records span many segments."""
    return MdstoreConfiguration.from_mapping(
        {
            "target-segment-size": 4096,
            "max-chunk-records": 1000,
            "writer-period-ms": 50,
            "cache-capacity-bytes": 1 << 24,
            "seed": 42,
        }
    )


@pytest.fixture
def open_store(tmp_path: Path, small_config) -> Iterator[Callable[..., DataStore]]:
    """Factory of data stores in a temporary directory, closed at teardown."""
    stores = []

    def _open(
        desc: RecordDescriptor | None = None, overrides: Dict[str, Any] | None = None
    ) -> DataStore:
        config = small_config.override(overrides or {})
        store = DataStore.open(tmp_path / "data", desc, config, durable=False)
        stores.append(store)
        return store

    yield _open
    for store in stores:
        store.close()
