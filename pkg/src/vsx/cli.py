"""Command-line entry points: offline index builds, the HTTP service, one-off
searches, judged evaluation runs, agreement reports, and stored-report lookup."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import ServiceConfig, build_runtime, load_config
from .evalrun import (
    agreement_to_csv,
    build_index_from_catalog,
    load_report,
    report_to_csv,
    run_agreement,
    run_eval,
)
from .vecindex import IndexConfig, VectorIndex
from .wire import dump_json, gallery_to_json, query_from_json


def _config_from_option(config_path: str | None) -> ServiceConfig:
    if config_path:
        return load_config(config_path)
    return ServiceConfig()


@click.group()
def main():
    """Taxonomy-decoupled visual search: index, serve, search, evaluate."""


@main.group()
def index():
    """Offline index operations."""


@index.command("build")
@click.argument("catalog", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Directory for the snapshot and sidecar.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Service config YAML; defaults are used when omitted.")
def index_build(catalog, out_dir, config_path):
    """Encode CATALOG rows, train partitions, and write a snapshot."""
    config = _config_from_option(config_path)
    runtime = build_runtime(config, index=VectorIndex(
        config.index or IndexConfig(dimension=config.dimension)))
    try:
        report = build_index_from_catalog(catalog, out_dir, runtime)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"indexed {report.indexed}/{report.total_rows} rows "
               f"({report.invalid} invalid) -> {report.snapshot_path}")
    for line in report.errors[:10]:
        click.echo(f"  invalid: {line}", err=True)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default=None, help="Override the configured listen host.")
@click.option("--port", default=None, type=int, help="Override the configured listen port.")
@click.option("--static-dir", default=None, type=click.Path(file_okay=False),
              help="Serve a built UI bundle at /.")
def serve(config_path, host, port, static_dir):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    config = load_config(config_path)
    runtime = build_runtime(config)
    app = create_app(runtime, static_dir=static_dir)
    uvicorn.run(app, host=host or config.listen_host, port=port or config.listen_port)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--query", "query_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Query document (precomputed detections/embeddings JSON).")
def search(config_path, query_path):
    """Search one query document and print the gallery JSON."""
    config = load_config(config_path)
    runtime = build_runtime(config)
    query = query_from_json(json.loads(Path(query_path).read_text()))
    gallery = runtime.pipeline.search_image(query)
    click.echo(json.dumps(gallery_to_json(gallery), indent=1, sort_keys=True))


@main.group()
def eval():
    """Judged evaluation runs and agreement reports."""


@eval.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", "queries_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSONL of query documents.")
@click.option("--judge", "judge_kind", default=None,
              type=click.Choice(["mock", "http"]), help="Override the configured backend.")
@click.option("--runs-dir", default=None, type=click.Path(file_okay=False))
def eval_run(config_path, queries_path, judge_kind, runs_dir):
    """Search + judge every query; write report.json, manifest.json, ratings.jsonl."""
    config = load_config(config_path)
    runtime = build_runtime(config)
    try:
        result = run_eval(queries_path, runtime, judge_kind=judge_kind, runs_dir=runs_dir)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"run {result.run_id} -> {result.run_dir}")
    click.echo(json.dumps(result.report["k"], indent=1, sort_keys=True))


@eval.command("agreement")
@click.argument("human", type=click.Path(exists=True, dir_okay=False))
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              help="Also write the report to this file.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              help="Also export the table as CSV.")
def eval_agreement(human, model, config_path, out_path, csv_path):
    """Agreement between HUMAN and MODEL rating files (JSONL, aligned pair ids)."""
    config = _config_from_option(config_path)
    try:
        report = run_agreement(human, model, config)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    if out_path:
        dump_json(out_path, report)
    if csv_path:
        Path(csv_path).write_text(agreement_to_csv(report))
    click.echo(json.dumps(report, indent=1, sort_keys=True))


@eval.command("report")
@click.argument("run_id")
@click.option("--runs-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              help="Also export the per-k table as CSV.")
def eval_report(run_id, runs_dir, csv_path):
    """Print the stored report for RUN_ID."""
    try:
        report = load_report(runs_dir, run_id)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc))
    if csv_path:
        Path(csv_path).write_text(report_to_csv(report))
    click.echo(json.dumps(report, indent=1, sort_keys=True))


if __name__ == "__main__":
    sys.exit(main())
