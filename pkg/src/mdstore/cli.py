# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------
# Command-line interface for the mdstore data store.
# Example:
#
# >>> mdstore --help
#
# --------------------------------------------------------------------------------------
#
# NOTE: import libraries in the command's function, not here, as having them here will
# slow down the CLI commands significantly.

import importlib.metadata as im
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Annotated, Any, Dict, List

import typer

from .constants import DEFAULT_DATA_DIR
from .exceptions import MdstoreError, QuerySyntaxError
from .utils import size_option

if TYPE_CHECKING:
    from .config import MdstoreConfiguration
    from .record import RecordDescriptor

app = typer.Typer(pretty_exceptions_enable=False)
stats_app = typer.Typer(help="Statistics of the segments of a store.")
app.add_typer(stats_app, name="stats")

py_logger = logging.getLogger(__name__)
cli_logger = logging.getLogger("cli_logger")


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


class FileFormat(str, Enum):
    BINARY = "binary"
    CSV = "csv"


@dataclass
class CliState:
    """Global options shared by every command."""

    data_dir: Path = DEFAULT_DATA_DIR
    desc: str | None = None
    seed: int | None = None
    output_format: OutputFormat = OutputFormat.CSV
    config_file: Path | None = None

    def descriptor(self, required: bool = False) -> "RecordDescriptor | None":
        from .record import load_descriptor

        if self.desc is None:
            if required:
                raise typer.BadParameter("A record descriptor is needed: pass --desc.")
            return None
        return load_descriptor(self.desc)

    def configuration(self, **overrides: Any) -> "MdstoreConfiguration":
        from .config import MdstoreConfiguration

        flat = {"data-directory": self.data_dir, "seed": self.seed, **overrides}
        if self.config_file is not None:
            config = MdstoreConfiguration.from_yaml(self.config_file)
        else:
            config = MdstoreConfiguration()
        return config.override(flat)


def _version_callback(value: bool):
    if not value:
        return
    try:
        ver = im.version("mdstore")
    except im.PackageNotFoundError:
        ver = "0+unknown"
    typer.echo(f"mdstore {ver}")
    raise typer.Exit()


def _fail(exc: Exception) -> typer.Exit:
    if isinstance(exc, QuerySyntaxError) and exc.text:
        cli_logger.error(f"{exc}\n{exc.pointer()}")
    else:
        cli_logger.error(str(exc))
    return typer.Exit(code=1)


def _emit(rows: List[Dict[str, Any]], fmt: OutputFormat) -> None:
    if fmt is OutputFormat.JSON:
        cli_logger.info(json.dumps(rows, indent=2, default=str))
        return
    import pandas as pd

    cli_logger.info(pd.DataFrame(rows).to_csv(index=False).rstrip("\n"))


@app.callback(invoke_without_command=True)
def _root(
    ctx: typer.Context,
    version: bool = typer.Option(
        False,
        "--version",
        "-v",
        help="Show version and exit.",
        callback=_version_callback,
        is_eager=True,
        expose_value=False,
    ),
    data_dir: Annotated[
        Path, typer.Option("--data-dir", help="Directory holding the segment files.")
    ] = DEFAULT_DATA_DIR,
    desc: Annotated[
        str | None,
        typer.Option(
            "--desc",
            help="Record descriptor: an XML file or a bundled name ('nyc', 'ghcn').",
        ),
    ] = None,
    seed: Annotated[
        int | None, typer.Option(help="Seed of segmentation and data generation.")
    ] = None,
    output_format: Annotated[
        OutputFormat, typer.Option("--format", help="Output format of results.")
    ] = OutputFormat.CSV,
    config: Annotated[
        Path | None,
        typer.Option("--config", help="YAML configuration file; flags override it."),
    ] = None,
):
    """mdstore command line interface."""
    ctx.obj = CliState(
        data_dir=data_dir,
        desc=desc,
        seed=seed,
        output_format=output_format,
        config_file=config,
    )


@app.command()
def gen(
    ctx: typer.Context,
    output: Annotated[Path, typer.Option(help="File to write the records to.")],
    count: Annotated[int, typer.Option(help="Number of records.")] = 100_000,
    distribution: Annotated[
        str, typer.Option(help="'uniform' or 'clustered'.")
    ] = "uniform",
    dims: Annotated[
        int, typer.Option(help="Indexing dimensions of the synthetic descriptor.")
    ] = 5,
    clusters: Annotated[int, typer.Option(help="Clusters of the clustered mode.")] = 10,
    file_format: Annotated[
        FileFormat, typer.Option("--file-format", help="Binary records or CSV.")
    ] = FileFormat.BINARY,
):
    """Generate synthetic records.

    Without --desc, a synthetic descriptor with DIMS float32 dimensions is used and saved
    next to the output as '<output>.xml'.
    """
    from .generator import (
        Distribution,
        generate_records,
        synthetic_descriptor,
        write_binary,
        write_csv,
    )

    state: CliState = ctx.obj
    try:
        desc = state.descriptor()
        if desc is None:
            desc = synthetic_descriptor(dims)
            desc_path = output.with_name(output.name + ".xml")
            desc_path.parent.mkdir(parents=True, exist_ok=True)
            desc_path.write_text(desc.to_xml(), encoding="utf-8")
            cli_logger.info(f"Saved record descriptor at '{desc_path.resolve()}'.")
        records = generate_records(
            desc, count, Distribution(distribution), seed=state.seed, clusters=clusters
        )
    except (MdstoreError, ValueError) as exc:
        raise _fail(exc)
    if file_format is FileFormat.CSV:
        write_csv(records, desc, output)
    else:
        write_binary(records, output)
    cli_logger.info(f"Wrote {count} {distribution} records to '{output.resolve()}'.")


@app.command()
def ingest(
    ctx: typer.Context,
    input: Annotated[Path, typer.Option(help="Binary or CSV record file.")],
    input_format: Annotated[
        FileFormat, typer.Option(help="Format of the input file.")
    ] = FileFormat.BINARY,
    scheme: Annotated[
        str | None, typer.Option(help="Segmentation scheme: 'random' or 'kdtree'.")
    ] = None,
    threads: Annotated[int | None, typer.Option(help="Number of feeder threads.")] = None,
    chunk: Annotated[int | None, typer.Option(help="Maximum records per chunk.")] = None,
    overpack: Annotated[
        float | None, typer.Option(help="Overpacking factor of the kd-tree scheme.")
    ] = None,
    segment_size: Annotated[
        str | None,
        typer.Option(help="Target segment size, e.g. '256KB'.", callback=size_option),
    ] = None,
    writer_threads: Annotated[int | None, typer.Option(help="Writer threads.")] = None,
    writer_period_ms: Annotated[
        float | None, typer.Option(help="Writer activation period in milliseconds.")
    ] = None,
):
    """Ingest a record file and report the ingest throughput."""
    from tabulate import tabulate

    from .datastore import DataStore

    state: CliState = ctx.obj
    if not input.is_file():
        cli_logger.error(f"Input file '{input}' does not exist.")
        raise typer.Exit(code=1)
    try:
        config = state.configuration(
            **{
                "scheme": scheme,
                "feeder-threads": threads,
                "ingestor-threads": threads,
                "max-chunk-records": chunk,
                "overpacking": overpack,
                "target-segment-size": segment_size,
                "writer-threads": writer_threads,
                "writer-period-ms": writer_period_ms,
            }
        )
        with DataStore.open(desc=state.descriptor(), config=config) as store:
            report = store.feed(input, input_format.value)
            flushed = store.flush()
            segments = store.segment_count
    except (MdstoreError, ValueError) as exc:
        raise _fail(exc)

    for error in report.errors:
        cli_logger.error(error)
    if report.truncated_cells:
        cli_logger.warning(f"{report.truncated_cells} char cells were truncated.")
    if not flushed:
        cli_logger.warning("Some segments could not be persisted.")
    rows = [
        {
            "feeder": f.feeder,
            "records": f.records,
            "chunks": f.chunks,
            "segments": f.segments,
            "seconds": round(f.seconds, 3),
            "records/s": round(f.records_per_second),
        }
        for f in report.feeders
    ]
    cli_logger.info(tabulate(rows, headers="keys", tablefmt="presto"))
    cli_logger.info(
        f"\nIngested {report.records} records in {report.seconds:.3f}s "
        f"({report.records_per_second:,.0f} records/s) into {report.segments} segments; "
        f"the store holds {segments} segments."
    )
    if report.errors:
        raise typer.Exit(code=1)


def _read_queries(query: str | None, query_file: Path | None) -> List[str]:
    queries = [query] if query else []
    if query_file is not None:
        lines = query_file.read_text(encoding="utf-8").splitlines()
        queries += [line.strip() for line in lines if line.strip()]
    return queries


@app.command()
def query(
    ctx: typer.Context,
    query: Annotated[str | None, typer.Option("--query", "-q", help="Query text.")] = None,
    query_file: Annotated[
        Path | None, typer.Option(help="File with one query per line.")
    ] = None,
    iterator: Annotated[
        str, typer.Option(help="Record iterator: 'kd' or 'seq'.")
    ] = "kd",
):
    """Run range queries against a store and print rows with their counters."""
    from .datastore import DataStore

    state: CliState = ctx.obj
    if iterator not in ("kd", "seq"):
        raise typer.BadParameter(f"Unknown iterator '{iterator}'. Use 'kd' or 'seq'.")
    queries = _read_queries(query, query_file)
    if not queries:
        raise typer.BadParameter("Pass --query or --query-file.")
    try:
        with DataStore.open(
            desc=state.descriptor(), config=state.configuration(), read_only=True
        ) as store:
            results = [store.query(text, iterator=iterator) for text in queries]
    except MdstoreError as exc:
        raise _fail(exc)

    for result in results:
        counters = {
            "segments_inspected": result.segments_inspected,
            "records_visited": result.records_visited,
            "seconds": round(result.seconds, 6),
        }
        if state.output_format is OutputFormat.JSON:
            payload = {"query": result.query, **counters, "rows": result.to_records()}
            cli_logger.info(json.dumps(payload, indent=2, default=str))
        else:
            rows = [{**row, **counters} for row in result.to_records()] or [counters]
            cli_logger.info(f"# {result.query}")
            _emit(rows, state.output_format)


@stats_app.command("overlap")
def stats_overlap(ctx: typer.Context):
    """Pairwise overlap of the bounding rectangles of the segments."""
    from tabulate import tabulate

    from .datastore import DataStore

    state: CliState = ctx.obj
    try:
        with DataStore.open(
            desc=state.descriptor(), config=state.configuration(), read_only=True
        ) as store:
            report = store.overlap_report(data_dir=str(store.data_dir))
    except MdstoreError as exc:
        raise _fail(exc)
    if state.output_format is OutputFormat.JSON:
        cli_logger.info(report.model_dump_json(indent=2))
        return
    cli_logger.info(f"Overlap method: {report.method}")
    cli_logger.info(tabulate([report.summary()], headers="keys", tablefmt="presto"))


@app.command()
def inspect(
    ctx: typer.Context,
    segment: Annotated[str, typer.Argument(help="Segment UUID.")],
):
    """Dump the header and section overview of a segment."""
    from uuid import UUID

    from tabulate import tabulate

    from .datastore import DataStore

    state: CliState = ctx.obj
    try:
        segment_uuid = UUID(segment)
    except ValueError:
        raise typer.BadParameter(f"'{segment}' is not a UUID.")
    try:
        with DataStore.open(
            desc=state.descriptor(), config=state.configuration(), read_only=True
        ) as store:
            summary = store.segment(segment_uuid).summary()
    except MdstoreError as exc:
        raise _fail(exc)
    if state.output_format is OutputFormat.JSON:
        cli_logger.info(json.dumps(summary, indent=2, default=str))
        return
    dimensions = summary.pop("dimensions")
    cli_logger.info(tabulate(summary.items(), tablefmt="presto"))
    cli_logger.info("")
    cli_logger.info(tabulate(dimensions, headers="keys", tablefmt="presto"))


@app.command()
def bench(
    ctx: typer.Context,
    records: Annotated[int, typer.Option(help="Synthetic records per workload.")] = 100_000,
    dims: Annotated[int, typer.Option(help="Indexing dimensions.")] = 5,
    runs: Annotated[int, typer.Option(help="Runs per measured setting.")] = 3,
    queries: Annotated[int, typer.Option(help="Queries of the iterator workload.")] = 50,
    workloads: Annotated[
        List[str] | None,
        typer.Option(
            "--workload",
            help="Workloads to run: chunks, threads, formats, iterators, overlap. "
            "Defaults to all.",
        ),
    ] = None,
    plot_dir: Annotated[
        Path | None, typer.Option(help="Directory to save plots in; no plots if unset.")
    ] = None,
    plot_file_suffix: Annotated[str, typer.Option(help="Suffix of the plot files.")] = ".png",
):
    """Run the benchmark workloads on synthetic data and print their tables."""
    import tempfile

    from tabulate import tabulate

    from . import bench as b
    from .datastore import DataStore
    from .generator import generate_records, synthetic_descriptor

    state: CliState = ctx.obj
    selected = set(workloads or ["chunks", "threads", "formats", "iterators", "overlap"])
    unknown = selected - {"chunks", "threads", "formats", "iterators", "overlap"}
    if unknown:
        raise typer.BadParameter(f"Unknown workloads: {', '.join(sorted(unknown))}")
    if plot_dir is not None:
        plot_dir = plot_dir.resolve()
        plot_dir.mkdir(parents=True, exist_ok=True)

    desc = synthetic_descriptor(dims)
    uniform = generate_records(desc, records, "uniform", seed=state.seed)
    cli_logger.info(f"CPU: {b.cpu_header()}")
    cli_logger.info(f"{records} records, {dims} dimensions, {runs} runs per setting\n")

    try:
        if "chunks" in selected:
            df = b.chunk_size_trend(desc, uniform, runs=runs)
            cli_logger.info("#" * 8 + " Chunk Size Trend (kdtree) " + "#" * 8)
            cli_logger.info(b.median_table(df, "chunk_records") + "\n")
            if plot_dir is not None:
                fig, _ = b.throughput_plot(df, "chunk_records", "Ingest throughput by chunk")
                b.save_plot(fig, plot_dir, "chunk_size_trend", plot_file_suffix)
        if "threads" in selected:
            df = b.thread_scaling(desc, uniform, runs=runs)
            cli_logger.info("#" * 8 + " Thread Scaling (random) " + "#" * 8)
            cli_logger.info(b.median_table(df, "feeder_threads") + "\n")
            if plot_dir is not None:
                fig, _ = b.throughput_plot(df, "feeder_threads", "Ingest thread scaling")
                b.save_plot(fig, plot_dir, "thread_scaling", plot_file_suffix)
        if "formats" in selected:
            df = b.format_comparison(desc, uniform, runs=runs)
            cli_logger.info("#" * 8 + " Binary vs CSV Ingest " + "#" * 8)
            cli_logger.info(b.median_table(df, "format") + "\n")
        if "iterators" in selected:
            texts = b.random_range_queries(desc, uniform, count=queries, seed=state.seed)
            with tempfile.TemporaryDirectory(prefix="mdstore-bench-") as tmp:
                config = state.configuration(**{"data-directory": Path(tmp)})
                with DataStore.open(desc=desc, config=config, durable=False) as store:
                    store.ingest_records(uniform)
                    df = b.iterator_comparison(store, texts)
            means = df.groupby("iterator", as_index=False)[
                ["seconds", "segments_inspected", "records_visited"]
            ].mean()
            cli_logger.info("#" * 8 + " Iterator Comparison " + "#" * 8)
            cli_logger.info(
                tabulate(means, headers="keys", tablefmt="presto", showindex=False) + "\n"
            )
            if plot_dir is not None:
                fig, _ = b.iterator_plot(df)
                b.save_plot(fig, plot_dir, "iterator_comparison", plot_file_suffix)
        if "overlap" in selected:
            clustered = generate_records(desc, records, "clustered", seed=state.seed)
            df = b.overlap_table(desc, clustered, seed=state.seed)
            cli_logger.info("#" * 8 + " Segment Overlap (clustered data) " + "#" * 8)
            cli_logger.info(
                tabulate(df, headers="keys", tablefmt="presto", showindex=False) + "\n"
            )
    except MdstoreError as exc:
        raise _fail(exc)


@app.command()
def sanity_check(
    all: Annotated[
        bool | None, typer.Option(help="Check also benchmark and CLI modules.")
    ] = False,
    optional_deps: Annotated[
        List[str] | None, typer.Option(help="List of optional dependencies.")
    ] = None,
):
    """Run sanity checks on the installation of mdstore by trying to import its
    modules."""
    from .tests.exceptions import SanityCheckError
    from .tests.sanity_check import run_sanity_check, sanity_check_all, sanity_check_slim

    try:
        if all:
            sanity_check_all()
        else:
            sanity_check_slim()
        if optional_deps is not None:
            run_sanity_check(optional_deps)
    except SanityCheckError as exc:
        cli_logger.error(str(exc))
        raise typer.Exit(code=1)


if __name__ == "__main__":
    app()
