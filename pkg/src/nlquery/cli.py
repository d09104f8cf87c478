"""Command-line client: one-shot questions, scans, rule management, benchmark
runs, and serving the HTTP API. All commands go through the same service core
as the HTTP handlers."""

from __future__ import annotations

import json
import sys

import click

from .bench import evaluate, load_dataset, make_gold_echo_backend, render_report
from .config import ConfigError, ServiceConfig
from .llm_gateway import Gateway
from .pipeline import render_table_text
from .service import AppState, ServiceError, build_gateway


def _load_config(config_path: str | None) -> ServiceConfig:
    if not config_path:
        raise click.UsageError("--config is required for this command")
    try:
        return ServiceConfig.from_file(config_path)
    except ConfigError as exc:
        raise click.ClickException(f"config error: {exc}") from exc


def _parse_backend_flag(backend: str | None) -> str | None:
    """--backend scripted:<script.json> overrides config; --backend http keeps
    the configured HTTP backend."""
    if backend is None or backend == "http":
        return None
    if backend.startswith("scripted:"):
        return backend.split(":", 1)[1]
    raise click.UsageError("--backend must be 'http' or 'scripted:<script_file>'")


def _make_state(config_path: str | None, backend: str | None) -> AppState:
    config = _load_config(config_path)
    script_file = _parse_backend_flag(backend)
    gateway = build_gateway(config, script_file=script_file)
    return AppState(config, gateway=gateway)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Path to the service config file.")
@click.option("--backend", default=None, help="Override the LLM backend: http or scripted:<script_file>.")
@click.option("--json", "as_json", is_flag=True, default=False, help="Machine-readable output.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, backend: str | None, as_json: bool):
    """Natural-language query engine for relational databases."""
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, backend=backend, as_json=as_json)


@main.command()
@click.argument("database")
@click.pass_context
def scan(ctx: click.Context, database: str):
    """Scan DATABASE and rebuild its retrieval index."""
    state = _make_state(ctx.obj["config_path"], ctx.obj["backend"])
    try:
        snapshot = state.scan_database(database)
    except ServiceError as exc:
        raise click.ClickException(str(exc)) from exc
    if ctx.obj["as_json"]:
        click.echo(snapshot.to_canonical_json())
    else:
        click.echo(f"scanned {database}: {len(snapshot.tables)} tables")
        for table in snapshot.tables:
            click.echo(f"  {table.name} ({len(table.columns)} columns, ~{table.approx_row_count} rows)")


@main.command()
@click.argument("database")
@click.argument("question")
@click.pass_context
def ask(ctx: click.Context, database: str, question: str):
    """Ask QUESTION against DATABASE in a one-shot session."""
    state = _make_state(ctx.obj["config_path"], ctx.obj["backend"])
    try:
        session = state.create_session(database)
        envelope, trace = state.ask(session.session_id, question)
    except ServiceError as exc:
        raise click.ClickException(str(exc)) from exc
    if ctx.obj["as_json"]:
        click.echo(json.dumps({"answer": envelope.to_dict(), "trace": trace}, indent=2, ensure_ascii=False))
        return
    click.echo(envelope.text)
    if envelope.sql:
        click.echo(f"\nSQL: {envelope.sql}")
    if envelope.table and envelope.table.rows:
        click.echo("")
        click.echo(render_table_text(envelope.table, max_rows=20))
    if trace["final_status"] == "exhausted":
        click.echo("\n(no validated SQL; see trace for details)", err=True)


@main.group()
def rules():
    """Manage global business rules."""


@rules.command("add")
@click.argument("text")
@click.option("--scope", type=click.Choice(["global", "session"]), default="global")
@click.option("--session-id", default=None)
@click.pass_context
def rules_add(ctx: click.Context, text: str, scope: str, session_id: str | None):
    state = _make_state(ctx.obj["config_path"], ctx.obj["backend"])
    try:
        rule = state.add_rule(text, scope=scope, session_id=session_id)
    except ServiceError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(json.dumps(rule.to_dict(), indent=2) if ctx.obj["as_json"] else f"added rule {rule.rule_id}")


@rules.command("list")
@click.pass_context
def rules_list(ctx: click.Context):
    state = _make_state(ctx.obj["config_path"], ctx.obj["backend"])
    active = state.list_rules()
    if ctx.obj["as_json"]:
        click.echo(json.dumps([r.to_dict() for r in active], indent=2, ensure_ascii=False))
        return
    if not active:
        click.echo("(no rules)")
    for rule in active:
        click.echo(f"{rule.rule_id}  {rule.text}")


@rules.command("rm")
@click.argument("rule_id")
@click.pass_context
def rules_rm(ctx: click.Context, rule_id: str):
    state = _make_state(ctx.obj["config_path"], ctx.obj["backend"])
    try:
        state.delete_rule(rule_id)
    except ServiceError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"deactivated rule {rule_id}")


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["text", "json", "csv"]), default="text")
@click.option("--out", type=click.Path(), default=None, help="Write the report to a file.")
@click.option("--workers", type=int, default=1)
@click.option("--timeout", "item_timeout_s", type=float, default=120.0, help="Per-item timeout in seconds.")
@click.option("--oracle", is_flag=True, default=False,
              help="Use the gold-echo backend (validates the harness; needs no config).")
@click.pass_context
def bench(ctx: click.Context, dataset_dir: str, fmt: str, out: str | None, workers: int,
          item_timeout_s: float, oracle: bool):
    """Evaluate the pipeline on a benchmark DATASET_DIR."""
    try:
        load = load_dataset(dataset_dir)
    except Exception as exc:
        raise click.ClickException(f"dataset error: {exc}") from exc
    if load.skipped:
        click.echo(f"skipped {len(load.skipped)} items with failing gold SQL", err=True)

    if oracle:
        gateway = Gateway(make_gold_echo_backend(load.items), retry_max=0)
        pipeline_config = None
    else:
        config = _load_config(ctx.obj["config_path"])
        script_file = _parse_backend_flag(ctx.obj["backend"])
        gateway = build_gateway(config, script_file=script_file)
        pipeline_config = config.pipeline

    report = evaluate(
        load.items,
        pipeline_config,
        gateway,
        workers=workers,
        item_timeout_s=item_timeout_s,
        skipped=load.skipped,
        dataset_path=load.path,
    )
    rendered = render_report(report, fmt)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(rendered if rendered.endswith("\n") else rendered + "\n")
        click.echo(f"report written to {out}")
    else:
        click.echo(rendered)


@main.command()
@click.pass_context
def serve(ctx: click.Context):
    """Run the HTTP service (config's listen_address)."""
    import uvicorn

    from .api import create_app

    state = _make_state(ctx.obj["config_path"], ctx.obj["backend"])
    app = create_app(state)
    uvicorn.run(app, host=state.config.listen_host, port=state.config.listen_port, log_level="info")


if __name__ == "__main__":
    sys.exit(main())
