# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Default configuration"""

from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Tuple

from omegaconf import OmegaConf
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .constants import (
    DEFAULT_CACHE_CAPACITY_BYTES,
    DEFAULT_DATA_DIR,
    DEFAULT_HIGH_WATER_MARK,
    DEFAULT_MAX_CHUNK_RECORDS,
    DEFAULT_MAX_SEGMENT_SIZE,
    DEFAULT_OVERPACKING,
    DEFAULT_PIVOT_SAMPLES,
    DEFAULT_WRITER_PERIOD_MS,
)


class Configuration(BaseModel):
    """Base configuration class."""

    __pydantic_extra__: Dict[str, Any] = Field(default_factory=dict)
    model_config = ConfigDict(extra="allow", validate_assignment=True)

    def __getitem__(self, idx):
        return self.__getattribute__(idx)


class SegmentationConfiguration(Configuration):
    """How chunks are divided into segments.

    Example:

    >>> cfg = SegmentationConfiguration(scheme="random", max_segment_size=256 * 1024)
    >>> cfg.overpacking  # default value
    4.0
    """

    #: Segmentation scheme. Defaults to 'kdtree'.
    scheme: Literal["random", "kdtree"] = "kdtree"
    #: Target segment size in bytes. Defaults to 1 MiB.
    max_segment_size: int = Field(DEFAULT_MAX_SEGMENT_SIZE, ge=1)
    #: Overpacking factor multiplying the per-segment record cap of the kd-tree
    #: scheme. Defaults to 4.
    overpacking: float = Field(DEFAULT_OVERPACKING, ge=1.0)
    #: Number of records sampled to pick a median pivot. Must be odd. Defaults to 3.
    pivot_samples: int = Field(DEFAULT_PIVOT_SAMPLES, ge=1)
    #: Seed of the segmentation random generator. None draws fresh entropy.
    seed: int | None = None

    @field_validator("pivot_samples")
    @classmethod
    def _odd_samples(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"pivot_samples must be odd, got {value}")
        return value


class IngestConfiguration(Configuration):
    """Chunking, threading and writer settings of the ingest path."""

    #: Maximum number of records per chunk. Defaults to 10K.
    max_chunk_records: int = Field(DEFAULT_MAX_CHUNK_RECORDS, ge=1)
    #: Maximum number of chunks processed concurrently. Defaults to 4.
    ingestor_threads: int = Field(4, ge=1)
    #: Number of writer threads. Defaults to 1.
    writer_threads: int = Field(1, ge=1)
    #: Writer activation period in milliseconds. Defaults to 500.
    writer_period_ms: float = Field(DEFAULT_WRITER_PERIOD_MS, gt=0)
    #: Maximum number of segments written per writer wakeup. Defaults to 64.
    writer_batch_max: int = Field(64, ge=1)
    #: Write queue length beyond which ingestion blocks. Defaults to 10K segments.
    high_water_mark: int = Field(DEFAULT_HIGH_WATER_MARK, ge=1)
    #: Number of threads feeding chunks. Defaults to 1.
    feeder_threads: int = Field(1, ge=1)


class StoreConfiguration(Configuration):
    """Storage, cache and query settings."""

    #: Directory holding the segment files.
    data_dir: Path = DEFAULT_DATA_DIR
    #: Segment cache capacity in bytes. Defaults to 1 GiB.
    cache_capacity_bytes: int = Field(DEFAULT_CACHE_CAPACITY_BYTES, ge=0)
    #: Size of the query thread pool. Defaults to 4.
    query_threads: int = Field(4, ge=1)
    #: Default per-segment record iterator.
    iterator: Literal["kd", "seq"] = "kd"


# Flat, dashed configuration keys accepted in YAML files and their model location
FLAT_KEYS: Dict[str, Tuple[str, str]] = {
    "scheme": ("segmentation", "scheme"),
    "target-segment-size": ("segmentation", "max_segment_size"),
    "overpacking": ("segmentation", "overpacking"),
    "pivot-samples": ("segmentation", "pivot_samples"),
    "seed": ("segmentation", "seed"),
    "max-chunk-records": ("ingest", "max_chunk_records"),
    "ingestor-threads": ("ingest", "ingestor_threads"),
    "writer-threads": ("ingest", "writer_threads"),
    "writer-period-ms": ("ingest", "writer_period_ms"),
    "writer-batch-max": ("ingest", "writer_batch_max"),
    "high-water-mark": ("ingest", "high_water_mark"),
    "feeder-threads": ("ingest", "feeder_threads"),
    "cache-capacity-bytes": ("store", "cache_capacity_bytes"),
    "data-directory": ("store", "data_dir"),
    "query-threads": ("store", "query_threads"),
    "iterator": ("store", "iterator"),
}


class MdstoreConfiguration(Configuration):
    """Complete data store configuration.

    Override values with the constructor, with :meth:`from_mapping` using the dashed
    keys of configuration files, or with :meth:`from_yaml`.
    """

    segmentation: SegmentationConfiguration = Field(default_factory=SegmentationConfiguration)
    ingest: IngestConfiguration = Field(default_factory=IngestConfiguration)
    store: StoreConfiguration = Field(default_factory=StoreConfiguration)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "MdstoreConfiguration":
        """Build a configuration from dashed flat keys and/or nested sections.
        Flat keys win over nested sections when both are given.
        """
        nested: Dict[str, Dict[str, Any]] = {"segmentation": {}, "ingest": {}, "store": {}}
        for section in nested:
            section_values = values.get(section)
            if isinstance(section_values, Mapping):
                nested[section].update(section_values)
        for key, value in values.items():
            if key in nested:
                continue
            if key not in FLAT_KEYS:
                raise ValueError(
                    f"Unknown configuration key '{key}'. "
                    f"Supported keys are {', '.join(sorted(FLAT_KEYS))}."
                )
            section, field = FLAT_KEYS[key]
            nested[section][field] = value
        return cls.model_validate(nested)

    @classmethod
    def from_yaml(
        cls, path: str | Path, overrides: Mapping[str, Any] | None = None
    ) -> "MdstoreConfiguration":
        """Load a YAML configuration file and apply flat-key overrides on top of it."""
        conf = OmegaConf.load(path)
        if overrides:
            conf = OmegaConf.merge(conf, OmegaConf.create(dict(overrides)))
        values = OmegaConf.to_container(conf, resolve=True)
        if not isinstance(values, dict):
            raise ValueError(f"Configuration file '{path}' must contain a mapping")
        return cls.from_mapping(values)

    def override(self, values: Mapping[str, Any]) -> "MdstoreConfiguration":
        """Copy of this configuration with the given flat keys replaced. None values
        leave the current setting untouched."""
        nested = self.model_dump()
        for key, value in values.items():
            if value is None:
                continue
            if key not in FLAT_KEYS:
                raise ValueError(f"Unknown configuration key '{key}'")
            section, field = FLAT_KEYS[key]
            nested[section][field] = value
        return type(self).model_validate(nested)
