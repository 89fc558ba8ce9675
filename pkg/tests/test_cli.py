# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Tests of the command-line interface, run in-process with typer's CliRunner."""

import json
import logging
from pathlib import Path

import pytest
from typer.testing import CliRunner

from mdstore.cli import app
from mdstore.datastore import DataStore

runner = CliRunner()


@pytest.fixture
def cli_log(monkeypatch, caplog):
    """Make the messages of the CLI logger visible to caplog."""
    monkeypatch.setattr(logging.getLogger("cli_logger"), "propagate", True)
    caplog.set_level(logging.INFO)
    return caplog


@pytest.fixture
def generated(tmp_path: Path):
    output = tmp_path / "records.bin"
    result = runner.invoke(
        app, ["--seed", "3", "gen", "--output", str(output), "--count", "2000", "--dims", "3"]
    )
    assert result.exit_code == 0, result.output
    return output, Path(str(output) + ".xml")


@pytest.fixture
def ingested(tmp_path: Path, generated):
    output, desc_path = generated
    data_dir = tmp_path / "data"
    result = runner.invoke(
        app,
        [
            "--data-dir", str(data_dir), "--desc", str(desc_path), "--seed", "1",
            "ingest", "--input", str(output), "--chunk", "1000", "--segment-size", "4KB",
            "--writer-period-ms", "20",
        ],
    )
    assert result.exit_code == 0, result.output
    return data_dir


def test_version():
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert result.output.startswith("mdstore ")


def test_gen_writes_records_and_descriptor(generated):
    output, desc_path = generated
    assert output.stat().st_size == 2000 * 28
    assert "<indexing-dimensions>" in desc_path.read_text()


def test_gen_csv(tmp_path: Path):
    output = tmp_path / "records.csv"
    result = runner.invoke(
        app,
        ["--desc", "ghcn", "gen", "--output", str(output), "--count", "10",
         "--file-format", "csv"],
    )
    assert result.exit_code == 0, result.output
    assert len(output.read_text().splitlines()) == 11
    assert not Path(str(output) + ".xml").exists()


def test_ingest_persists_segments(ingested):
    segment_files = list(ingested.glob("*.mdseg"))
    assert len(segment_files) > 1
    with DataStore.open(ingested, read_only=True) as store:
        assert store.record_count == 2000


def test_ingest_missing_input(tmp_path: Path, cli_log):
    result = runner.invoke(
        app, ["--data-dir", str(tmp_path), "--desc", "nyc", "ingest", "--input", "nope.bin"]
    )
    assert result.exit_code == 1
    assert "does not exist" in cli_log.text


def test_ingest_bad_segment_size(tmp_path: Path, generated):
    output, desc_path = generated
    result = runner.invoke(
        app,
        ["--data-dir", str(tmp_path), "--desc", str(desc_path), "ingest", "--input",
         str(output), "--segment-size", "lots"],
    )
    assert result.exit_code == 2


def test_query_csv(ingested, cli_log):
    result = runner.invoke(
        app, ["--data-dir", str(ingested), "query", "-q", "count(*)", "--iterator", "seq"]
    )
    assert result.exit_code == 0, result.output
    messages = [r.getMessage() for r in cli_log.records if r.name == "cli_logger"]
    table = messages[messages.index("# count(*)") + 1].splitlines()
    assert table[0] == "count(*),segments_inspected,records_visited,seconds"
    assert table[1].startswith("2000,")


def test_query_json_file(ingested, tmp_path: Path, cli_log):
    query_file = tmp_path / "queries.txt"
    query_file.write_text("count(*) where d0 >= 0\n\nmax(d1) where d0 < 0\n")
    result = runner.invoke(
        app,
        ["--data-dir", str(ingested), "--format", "json", "query", "--query-file",
         str(query_file)],
    )
    assert result.exit_code == 0, result.output
    payloads = [
        json.loads(record.getMessage())
        for record in cli_log.records
        if record.name == "cli_logger"
    ]
    assert [p["query"] for p in payloads] == ["count(*) where d0 >= 0", "max(d1) where d0 < 0"]
    assert 0 < payloads[0]["rows"][0]["count(*)"] < 2000
    assert payloads[0]["segments_inspected"] > 0


def test_query_syntax_error(ingested, cli_log):
    result = runner.invoke(app, ["--data-dir", str(ingested), "query", "-q", "count(*) whre"])
    assert result.exit_code == 1
    assert "^" in cli_log.text


def test_query_needs_text(ingested):
    result = runner.invoke(app, ["--data-dir", str(ingested), "query"])
    assert result.exit_code == 2
    args = ["--data-dir", str(ingested), "query", "-q", "*", "--iterator", "x"]
    result = runner.invoke(app, args)
    assert result.exit_code == 2


def test_query_missing_store(tmp_path: Path, cli_log):
    result = runner.invoke(app, ["--data-dir", str(tmp_path / "none"), "query", "-q", "*"])
    assert result.exit_code == 1
    assert "does not exist" in cli_log.text


def test_stats_overlap_json(ingested, cli_log):
    args = ["--data-dir", str(ingested), "--format", "json", "stats", "overlap"]
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    message = [r.getMessage() for r in cli_log.records if r.name == "cli_logger"][-1]
    report = json.loads(message)
    assert report["segment_count"] == len(report["counts"]) > 1
    assert report["metadata"]["data_dir"] == str(ingested)


def test_inspect(ingested, cli_log):
    with DataStore.open(ingested, read_only=True) as store:
        ref = store.references()[0]
    result = runner.invoke(
        app,
        ["--data-dir", str(ingested), "--format", "json", "inspect", str(ref.segment_uuid)],
    )
    assert result.exit_code == 0, result.output
    message = [r.getMessage() for r in cli_log.records if r.name == "cli_logger"][-1]
    summary = json.loads(message)
    assert summary["segment_uuid"] == str(ref.segment_uuid)
    assert summary["record_count"] == ref.record_count
    assert len(summary["dimensions"]) == 3


def test_inspect_errors(ingested):
    result = runner.invoke(app, ["--data-dir", str(ingested), "inspect", "not-a-uuid"])
    assert result.exit_code == 2
    result = runner.invoke(
        app,
        ["--data-dir", str(ingested), "inspect", "00000000-0000-0000-0000-000000000000"],
    )
    assert result.exit_code == 1


def test_sanity_check():
    result = runner.invoke(app, ["sanity-check"])
    assert result.exit_code == 0
