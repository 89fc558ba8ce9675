# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Benchmark workloads: ingest throughput trends, iterator comparison and segment overlap.

Absolute numbers depend on the machine; the workloads are meant for comparing
settings against each other on one host.
"""

import logging
import tempfile
from pathlib import Path
from typing import Dict, List, Literal, Sequence, Tuple

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns
from matplotlib.axes import Axes
from matplotlib.figure import Figure
from tabulate import tabulate

from .config import MdstoreConfiguration
from .datastore import DataStore
from .generator import write_binary, write_csv
from .ingest import FeedReport
from .record import FieldType, RecordDescriptor

matplotlib.use("Agg")

py_logger = logging.getLogger(__name__)
cli_logger = logging.getLogger("cli_logger")

# Writers stay idle while throughput is measured
_IDLE_WRITER_PERIOD_MS = 3_600_000.0


def cpu_header() -> str:
    """One line describing the processor the benchmarks run on."""
    import cpuinfo

    info = cpuinfo.get_cpu_info()
    brand = info.get("brand_raw", "unknown CPU")
    return f"{brand}, {info.get('count', '?')} logical cores, {info.get('arch', '?')}"


def _bench_config(base: MdstoreConfiguration | None, **flat) -> MdstoreConfiguration:
    config = base or MdstoreConfiguration()
    return config.override({"writer-period-ms": _IDLE_WRITER_PERIOD_MS, **flat})


def ingest_once(
    desc: RecordDescriptor,
    config: MdstoreConfiguration,
    records: np.ndarray | None = None,
    path: Path | None = None,
    fmt: Literal["binary", "csv"] = "binary",
) -> FeedReport:
    """Ingest into a throw-away store and report the feed throughput."""
    with tempfile.TemporaryDirectory(prefix="mdstore-bench-") as tmp:
        store = DataStore.open(Path(tmp) / "data", desc, config, durable=False)
        try:
            if path is not None:
                report = store.feed(path, fmt)
            else:
                assert records is not None
                report = store.ingest_records(records)
        finally:
            store.close(flush=False)
    if report.errors:
        py_logger.warning(f"Benchmark feed reported errors: {report.errors}")
    return report


def chunk_size_trend(
    desc: RecordDescriptor,
    records: np.ndarray,
    chunk_sizes: Sequence[int] = (10_000, 100_000, 1_000_000),
    scheme: str = "kdtree",
    runs: int = 3,
    config: MdstoreConfiguration | None = None,
) -> pd.DataFrame:
    """Single-feeder binary ingest throughput for every chunk size."""
    rows = []
    for chunk in chunk_sizes:
        cfg = _bench_config(
            config, **{"max-chunk-records": chunk, "scheme": scheme, "feeder-threads": 1}
        )
        for run in range(runs):
            report = ingest_once(desc, cfg, records)
            rows.append(
                {
                    "chunk_records": chunk,
                    "run": run,
                    "records_per_second": report.records_per_second,
                    "segments": report.segments,
                }
            )
            py_logger.debug(f"chunk {chunk} run {run}: {report.records_per_second:.0f} rec/s")
    return pd.DataFrame(rows)


def thread_scaling(
    desc: RecordDescriptor,
    records: np.ndarray,
    thread_counts: Sequence[int] = (1, 2, 4),
    scheme: str = "random",
    runs: int = 3,
    chunk_records: int = 10_000,
    config: MdstoreConfiguration | None = None,
) -> pd.DataFrame:
    """Binary ingest throughput for every number of feeder threads."""
    rows = []
    for threads in thread_counts:
        cfg = _bench_config(
            config,
            **{
                "scheme": scheme,
                "feeder-threads": threads,
                "ingestor-threads": threads,
                "max-chunk-records": chunk_records,
            },
        )
        for run in range(runs):
            report = ingest_once(desc, cfg, records)
            rows.append(
                {
                    "feeder_threads": threads,
                    "run": run,
                    "records_per_second": report.records_per_second,
                }
            )
    return pd.DataFrame(rows)


def format_comparison(
    desc: RecordDescriptor,
    records: np.ndarray,
    chunk_records: int = 10_000,
    scheme: str = "kdtree",
    runs: int = 3,
    config: MdstoreConfiguration | None = None,
) -> pd.DataFrame:
    """Ingest throughput from a binary file against the same records as CSV."""
    cfg = _bench_config(
        config, **{"max-chunk-records": chunk_records, "scheme": scheme, "feeder-threads": 1}
    )
    rows = []
    with tempfile.TemporaryDirectory(prefix="mdstore-input-") as tmp:
        inputs: Dict[Literal["binary", "csv"], Path] = {
            "binary": write_binary(records, Path(tmp) / "records.bin"),
            "csv": write_csv(records, desc, Path(tmp) / "records.csv"),
        }
        for run in range(runs):
            for fmt, path in inputs.items():
                report = ingest_once(desc, cfg, path=path, fmt=fmt)
                rows.append(
                    {
                        "format": fmt,
                        "run": run,
                        "records_per_second": report.records_per_second,
                    }
                )
    return pd.DataFrame(rows)


def _literal(value: float, kind: FieldType) -> str:
    if kind is FieldType.FLOAT32:
        return repr(float(value))
    return str(int(value))


def random_range_queries(
    desc: RecordDescriptor,
    records: np.ndarray,
    count: int = 50,
    selectivity: float = 0.001,
    aggregate: str = "count(*)",
    seed: int | None = None,
) -> List[str]:
    """Box queries centered on random records, each spanning ``selectivity`` of the data
    range in volume.

    Every query bounds all indexing dimensions with the same relative side length.
    """
    rng = np.random.default_rng(seed)
    side = selectivity ** (1.0 / desc.dims)
    spans = {
        name: float(np.ptp(records[name].astype(np.float64))) for name in desc.indexing_dims
    }
    queries = []
    for _ in range(count):
        center = records[rng.integers(0, len(records))]
        predicates = []
        for name, kind in zip(desc.indexing_dims, desc.dim_kinds):
            half = spans[name] * side / 2
            mid = float(center[name])
            lo, hi = mid - half, mid + half
            if kind is not FieldType.FLOAT32:
                lo, hi = np.floor(lo), np.ceil(hi)
            predicates.append(f"{name} in [{_literal(lo, kind)}, {_literal(hi, kind)}]")
        queries.append(f"{aggregate} where " + " and ".join(predicates))
    return queries


def iterator_comparison(store: DataStore, queries: Sequence[str]) -> pd.DataFrame:
    """Per query and iterator kind: response time, segments and records visited."""
    rows = []
    for i, text in enumerate(queries):
        for kind in ("kd", "seq"):
            result = store.query(text, iterator=kind)
            rows.append(
                {
                    "query": i,
                    "iterator": kind,
                    "seconds": result.seconds,
                    "segments_inspected": result.segments_inspected,
                    "records_visited": result.records_visited,
                    "value": result.value,
                }
            )
    return pd.DataFrame(rows)


def overlap_table(
    desc: RecordDescriptor,
    records: np.ndarray,
    schemes: Sequence[Tuple[str, float]] = (("random", 1.0), ("kdtree", 4.0)),
    chunk_records: int = 10_000,
    segment_size: int = 256 * 1024,
    seed: int | None = None,
    config: MdstoreConfiguration | None = None,
) -> pd.DataFrame:
    """Pairwise segment overlap for every ``(scheme, overpacking)`` setting."""
    rows = []
    for scheme, overpacking in schemes:
        cfg = _bench_config(
            config,
            **{
                "scheme": scheme,
                "overpacking": overpacking,
                "max-chunk-records": chunk_records,
                "target-segment-size": segment_size,
                "seed": seed,
            },
        )
        with tempfile.TemporaryDirectory(prefix="mdstore-bench-") as tmp:
            store = DataStore.open(Path(tmp) / "data", desc, cfg, durable=False)
            try:
                store.ingest_records(records)
                report = store.overlap_report(
                    scheme=scheme,
                    overpacking=overpacking,
                    chunk_records=chunk_records,
                    segment_size=segment_size,
                )
            finally:
                store.close(flush=False)
        rows.append(report.summary())
    return pd.DataFrame(rows)


def throughput_plot(df: pd.DataFrame, x: str, title: str) -> Tuple[Figure, Axes]:
    """Median throughput against ``x``, with the individual runs as points."""
    sns.set_theme()
    fig, ax = plt.subplots()
    medians = df.groupby(x, as_index=False)["records_per_second"].median()
    ax.plot(medians[x], medians["records_per_second"], marker="o", linestyle="-")
    ax.scatter(df[x], df["records_per_second"], alpha=0.4, s=12)
    if pd.api.types.is_numeric_dtype(df[x]) and df[x].max() / max(df[x].min(), 1) >= 100:
        ax.set_xscale("log")
    ax.set_xlabel(x.replace("_", " ").capitalize())
    ax.set_ylabel("Records per second")
    ax.set_title(title)
    plt.tight_layout()
    sns.reset_orig()
    return fig, ax


def iterator_plot(df: pd.DataFrame) -> Tuple[Figure, Axes]:
    """Mean records visited and response time of both iterators."""
    sns.set_theme()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    means = df.groupby("iterator", as_index=False)[["records_visited", "seconds"]].mean()
    sns.barplot(data=means, x="iterator", y="records_visited", ax=axes[0])
    sns.barplot(data=means, x="iterator", y="seconds", ax=axes[1])
    axes[0].set_ylabel("Mean records visited")
    axes[1].set_ylabel("Mean response time (s)")
    fig.suptitle("kd-tree against sequential record iteration")
    plt.tight_layout()
    sns.reset_orig()
    return fig, axes[0]


def median_table(df: pd.DataFrame, by: str) -> str:
    medians = df.groupby(by, as_index=False)["records_per_second"].median()
    medians["records_per_second"] = medians["records_per_second"].round(0)
    return tabulate(medians, headers="keys", tablefmt="presto", showindex=False)


def save_plot(fig: Figure, plot_dir: Path, name: str, suffix: str = ".png") -> Path:
    path = plot_dir / (name + suffix)
    fig.savefig(path)
    plt.close(fig)
    cli_logger.info(f"Saved {name.replace('_', '-')} plot at '{path.resolve()}'.")
    return path
