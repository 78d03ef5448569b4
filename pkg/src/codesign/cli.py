"""Command-line harness: simulate, replay, report, export-manifest, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import CodesignError, CorruptLog
from .gateway.events import log_hash, read_log
from .gateway.service import (
    DEFAULT_MAX_ROUNDS,
    GatewayService,
    parse_attribute,
    replay_project,
    state_hash,
)
from .reporting import emit_attribution_bundle, emit_consensus_bundle, write_json


@click.group()
def main() -> None:
    """Co-design preference engine."""


def _parse_seeds(seeds: str) -> tuple[int, ...]:
    if "," in seeds:
        return tuple(int(s) for s in seeds.split(",") if s.strip())
    return tuple(range(int(seeds)))


@main.command()
@click.option("--users", default=1, show_default=True, help="Synthetic users per run.")
@click.option("--catalog-size", default=200, show_default=True)
@click.option("--rounds", default=DEFAULT_MAX_ROUNDS, show_default=True)
@click.option("--seeds", default="20", show_default=True,
              help="Seed count, or comma-separated explicit seeds.")
@click.option("--noise", default=0.0, show_default=True, help="Label flip probability.")
@click.option("--strategy", default="both", show_default=True,
              type=click.Choice(["entropy", "random", "both"]))
@click.option("--brush-probability", default=1.0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
def simulate(users: int, catalog_size: int, rounds: int, seeds: str, noise: float,
             strategy: str, brush_probability: float, out_dir: Path) -> None:
    """Drive scripted co-design runs and emit metrics CSV + figures."""
    from .simulate import SimulationConfig, simulate as run

    config = SimulationConfig(
        users=users, catalog_size=catalog_size, rounds=rounds,
        seeds=_parse_seeds(seeds), noise=noise, strategy=strategy,
        brush_probability=brush_probability,
    )
    summary = run(config, out_dir)
    for strat, auc in sorted(summary.mean_final_auc.items()):
        click.echo(f"mean final held-out AUC [{strat}]: {auc:.4f}")
    if summary.comparison_rows:
        diffs = [row[3] for row in summary.comparison_rows]
        wins = sum(1 for d in diffs if d > 0)
        click.echo(
            f"entropy - random AUC: mean {sum(diffs) / len(diffs):+.4f}, "
            f"{wins}/{len(diffs)} seeds positive"
        )
    click.echo(f"wall time: {summary.wall_time_s:.1f}s")
    for p in summary.paths:
        click.echo(f"wrote {p}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(path_type=Path))
def replay(log_path: Path) -> None:
    """Rebuild project state from an event log; print a summary and hash."""
    try:
        events = read_log(log_path)
        svc = replay_project(Path(log_path).parent)
    except CorruptLog as exc:
        click.echo(f"corrupt log: {exc.message} (seq={exc.seq})", err=True)
        sys.exit(2)
    except CodesignError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(2)
    st = svc.state
    click.echo(f"events: {len(events)}")
    click.echo(f"log hash: {log_hash(events)}")
    if st is None:
        click.echo("state: empty (no ProjectCreated event)")
        return
    click.echo(f"project: {st.project_id} (seed {st.seed}, mode {st.mode})")
    click.echo(f"items: {len(st.catalog.visible_items())} visible / "
               f"{len(st.catalog.all_items())} total, {len(st.staged)} staged")
    click.echo(f"sessions: {len(st.sessions)}, records: {len(st.records)}, "
               f"models: {len(st.models)}")
    click.echo(f"state hash: {state_hash(st)}")


@main.command()
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option("--project", "project_id", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
def report(data_dir: Path, project_id: str, out_dir: Path) -> None:
    """Emit the consensus + attribution bundles (CSV/JSON + figures)."""
    gateway = GatewayService(data_dir)
    try:
        svc = gateway.project(project_id)
    except CodesignError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(2)
    out_dir = Path(out_dir)
    paths = emit_consensus_bundle(svc.consensus_view(), out_dir)
    st = svc.state
    for item_id in sorted(st.staged):
        view = svc.attribution_view(item_id)
        paths += emit_attribution_bundle(view, out_dir, stem=f"attribution_{item_id}")
    lines = [json.dumps({"schema_version": 1, **r.as_dict()}, sort_keys=True)
             for r in st.records]
    interactions = out_dir / "interactions.jsonl"
    interactions.parent.mkdir(parents=True, exist_ok=True)
    interactions.write_text("".join(line + "\n" for line in lines))
    paths.append(interactions)
    write_json(out_dir / "summary.json", {
        "project_id": project_id,
        "log_offset": svc.offset,
        "users": st.user_ids(),
        "items": len(st.catalog.visible_items()),
        "records": len(st.records),
        "state_hash": state_hash(st),
    })
    for p in paths:
        click.echo(f"wrote {p}")


@main.command("export-manifest")
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option("--project", "project_id", required=True)
@click.option("--attribute", required=True,
              help="Attribute as 'dim.attr' indices or 'Dimension:Attribute' names.")
def export_manifest(data_dir: Path, project_id: str, attribute: str) -> None:
    """Export the fine-tune manifest (images, masks, prompts) for one attribute."""
    gateway = GatewayService(data_dir)
    try:
        svc = gateway.project(project_id)
        doc = svc.export_manifest_cmd(parse_attribute(attribute))
    except CodesignError as exc:
        click.echo(f"error: {exc.message}", err=True)
        sys.exit(2)
    if doc["empty"]:
        click.echo("manifest is empty: no unpruned liked garments with qualifying brushes")
    click.echo(f"entries: {len(doc['entries'])}")
    click.echo(f"wrote {doc['path']}")


@main.command()
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8800, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-rounds", default=DEFAULT_MAX_ROUNDS, show_default=True)
def serve(data_dir: Path, host: str, port: int, seed: int, max_rounds: int) -> None:
    """Run the HTTP gateway."""
    import uvicorn

    from .gateway.api import create_app

    app = create_app(data_dir, base_seed=seed, max_rounds=max_rounds)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
