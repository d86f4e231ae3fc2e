"""Command-line interface: serve, chat, consolidate, sweep, eval, inspect."""

from __future__ import annotations

import datetime as dt
import json
import sys
from pathlib import Path

import click

from .config import ServiceConfig, build_engine, load_config
from .engine import MemoryBankEngine
from .errors import MemoryBankError
from .evalharness import (
    import_labels,
    retrieval_accuracy,
    run_full_eval,
    score_metrics,
)
from .fixtures import PROBE_QUESTION, probe_time, seed_demo_user
from .forgetting import retention


def _parse_when(value: str | None) -> dt.datetime | None:
    if value is None:
        return None
    parsed = dt.datetime.fromisoformat(value)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=dt.timezone.utc)
    return parsed


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None)
@click.option("--top-k", type=int, default=None)
@click.option("--decay-threshold", type=float, default=None)
@click.option("--decay-mode", type=click.Choice(["threshold", "stochastic"]), default=None)
@click.option("--seed", "decay_seed", type=int, default=None, help="stochastic decay seed")
@click.option("--language", type=click.Choice(["en", "zh"]), default=None)
@click.pass_context
def main(ctx, config_path, data_dir, top_k, decay_threshold, decay_mode, decay_seed, language):
    """Long-term conversational memory engine."""
    overrides = {
        "data_dir": data_dir,
        "top_k": top_k,
        "decay_threshold": decay_threshold,
        "decay_mode": decay_mode,
        "decay_seed": decay_seed,
        "language": language,
    }
    try:
        config = load_config(config_path, overrides)
    except MemoryBankError as exc:
        raise click.ClickException(str(exc)) from exc
    ctx.obj = config


def _engine(config: ServiceConfig) -> MemoryBankEngine:
    return build_engine(config)


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--ui-dir", type=click.Path(file_okay=False), default=None)
@click.pass_obj
def serve(config: ServiceConfig, host, port, ui_dir):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    app = create_app(_engine(config), ui_dir)
    uvicorn.run(app, host=host or config.listen_host, port=port or config.listen_port)


@main.command()
@click.argument("user_id")
@click.option("--at", default=None, help="ISO timestamp override (testing)")
@click.pass_obj
def chat(config: ServiceConfig, user_id, at):
    """Terminal chat REPL against a local store."""
    engine = _engine(config)
    when = _parse_when(at)
    click.echo("Type a message; empty line or Ctrl-D exits.")
    while True:
        try:
            message = input("you> ").strip()
        except EOFError:
            break
        if not message:
            break
        try:
            result = engine.chat(user_id, message, when)
        except MemoryBankError as exc:
            click.echo(f"error: {exc}", err=True)
            continue
        click.echo(f"ai> {result.reply}")
        for detail in result.details:
            click.echo(
                f"    [{detail.rank}] {detail.piece_id} score={detail.score:.3f} "
                f"S={detail.strength}"
            )


@main.command()
@click.argument("user_id")
@click.option("--day", default=None, help="single day YYYY-MM-DD; omit for all days")
@click.pass_obj
def consolidate(config: ServiceConfig, user_id, day):
    """Build daily summaries/portraits and refresh the global units."""
    engine = _engine(config)
    parsed = dt.date.fromisoformat(day) if day else None
    try:
        result = engine.consolidate(user_id, parsed)
    except MemoryBankError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"consolidated days: {', '.join(d.isoformat() for d in result.days)}")
    click.echo(f"global summary: {result.global_events}")
    click.echo(f"global portrait: {result.global_portrait}")


@main.command()
@click.option("--user", "user_id", default=None, help="single user; omit for all")
@click.option("--now", default=None, help="ISO timestamp override")
@click.pass_obj
def sweep(config: ServiceConfig, user_id, now):
    """Age memory: tombstone pieces whose retention decayed away."""
    engine = _engine(config)
    when = _parse_when(now)
    try:
        if user_id:
            forgotten = {user_id: engine.sweep_user(user_id, when)}
        else:
            forgotten = engine.sweep_all(when)
    except MemoryBankError as exc:
        raise click.ClickException(str(exc)) from exc
    total = sum(len(v) for v in forgotten.values())
    click.echo(f"forgot {total} piece(s)")
    for uid, ids in forgotten.items():
        if ids:
            click.echo(f"  {uid}: {', '.join(ids)}")


@main.command()
@click.option("--users", type=int, default=15, show_default=True)
@click.option("--days", type=int, default=10, show_default=True)
@click.option("--topics-per-day", type=int, default=2, show_default=True)
@click.option("--eval-seed", type=int, default=7, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="reports", show_default=True)
@click.option("--labels", type=click.Path(exists=True, dir_okay=False), default=None,
              help="human label file (probe_id, model, coherence, rank)")
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.pass_obj
def eval(config: ServiceConfig, users, days, topics_per_day, eval_seed, out, labels, figures):
    """Run the probing-question evaluation and write the report bundle."""
    from .report import metrics_table, write_eval_outputs

    run = run_full_eval(
        seed=eval_seed,
        users=users,
        days=days,
        topics_per_day=topics_per_day,
        language=config.language,
        top_k=config.top_k,
    )
    if labels:
        merged = import_labels(labels, run.probes)
        run.report = score_metrics(run.probes, language=config.language)
        click.echo(f"merged {merged} human label record(s)")
    table = metrics_table(run.report)
    click.echo(table, nl=False)
    acc = retrieval_accuracy(run.probes)
    click.echo(f"retrieval accuracy: {acc:.4f} over {len(run.probes)} probes")
    paths = write_eval_outputs(run, out, figures=figures)
    for name, path in paths.items():
        click.echo(f"wrote {name}: {path}")


@main.command()
@click.argument("user_id")
@click.option("--now", default=None, help="ISO timestamp for retention values")
@click.option("--plot", type=click.Path(dir_okay=False), default=None,
              help="write a retention-curve figure to this path")
@click.option("--as-json", is_flag=True, default=False)
@click.pass_obj
def inspect(config: ServiceConfig, user_id, now, plot, as_json):
    """Show a user's stored memory and retention state."""
    engine = _engine(config)
    when = _parse_when(now) or dt.datetime.now(dt.timezone.utc)
    try:
        pieces = engine.enumerate_pieces(user_id, include_forgotten=True)
    except MemoryBankError as exc:
        raise click.ClickException(str(exc)) from exc
    portrait, _ = engine.portrait(user_id)
    if as_json:
        payload = {
            "user_id": user_id,
            "turns": len(engine.day_log(user_id, when.date())),
            "global_portrait": portrait,
            "global_events": engine.global_summary(user_id),
            "pieces": [
                {
                    "piece_id": p.piece_id,
                    "kind": p.kind.value,
                    "strength": p.forgetting.strength,
                    "forgotten": p.forgetting.forgotten,
                }
                for p in pieces
            ],
        }
        click.echo(json.dumps(payload, ensure_ascii=False, indent=2))
        return
    click.echo(f"user: {user_id}")
    click.echo(f"pieces: {len(pieces)}")
    click.echo(f"global portrait: {portrait or '(none)'}")
    click.echo(f"global summary: {engine.global_summary(user_id) or '(none)'}")
    for piece in pieces:
        state = piece.forgetting
        if state.forgotten:
            status = "forgotten"
        else:
            at = max(when, state.last_recall_at)
            status = f"R={retention(state, at, engine.policy.time_unit):.4f}"
        click.echo(f"  {piece.piece_id:<24} {piece.kind.value:<22} S={state.strength:<3} {status}")
    if plot:
        from .report import plot_retention_curves

        path = plot_retention_curves(engine, user_id, Path(plot), when)
        click.echo(f"wrote figure: {path}")


@main.command("seed-demo")
@click.option("--user", "user_id", default="gary", show_default=True)
@click.pass_obj
def seed_demo(config: ServiceConfig, user_id):
    """Load the bundled demo conversation into the store."""
    if config.data_dir is None:
        raise click.ClickException("seed-demo needs --data-dir so the bank persists")
    engine = _engine(config)
    piece_id = seed_demo_user(engine, user_id)
    click.echo(f"seeded user {user_id!r}; stress piece: {piece_id}")
    click.echo(f"try: memorybank --data-dir {config.data_dir} chat {user_id}")
    click.echo(f'probe ({probe_time().date()}): "{PROBE_QUESTION}"')


if __name__ == "__main__":
    sys.exit(main())
