"""Command line entry points: ingestion, serving, and the evaluation suite."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

from .config import AppConfig
from .dri import build_default_reference, build_reference_from_paths, save_reference
from .evaluation import EvalConfig, run_eval_suite


@click.group()
def main():
    """Closed-loop meal-level nutrition management engine."""


@main.command("ingest-dri")
@click.option("--minerals", type=click.Path(exists=True), default=None,
              help="Minerals source table (defaults to the packaged table).")
@click.option("--vitamins", type=click.Path(exists=True), default=None)
@click.option("--macros", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True,
              help="Where to write the merged reference CSV.")
def ingest_dri(minerals, vitamins, macros, out):
    """Parse, clean, unit-normalize and merge the allowance tables."""
    if minerals or vitamins or macros:
        if not (minerals and vitamins and macros):
            raise click.UsageError("provide all three tables or none")
        ref = build_reference_from_paths(minerals, vitamins, macros)
    else:
        ref = build_default_reference()
    save_reference(ref, out)
    click.echo(f"merged {len(ref)} reference rows -> {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--store", "store_root", type=click.Path(), default=None)
def serve(config_path, host, port, store_root):
    """Run the HTTP service (mock backends unless configured otherwise)."""
    import uvicorn

    from .api import build_context, create_app

    config = AppConfig.load(config_path)
    if store_root:
        config.store_root = store_root
    if host:
        config.host = host
    if port:
        config.port = port
    ctx = build_context(config)
    try:
        uvicorn.run(create_app(ctx), host=config.host, port=config.port, log_level="warning")
    finally:
        ctx.close()


def _parse_mix(text: str | None) -> dict[str, float] | None:
    if not text:
        return None
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise click.UsageError("class mix needs three comma-separated proportions")
    return dict(zip(("insufficient", "near_target", "excessive"), parts))


def _write_tables(report: dict, tables_dir: Path) -> None:
    tables_dir.mkdir(parents=True, exist_ok=True)

    with open(tables_dir / "nutrient_metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "field", "unit", "group", "n", "mae", "coverage"])
        for run in ("zero_noise", "micronutrient_dropout"):
            for name, row in report["nutrient_metrics"][run]["per_field"].items():
                writer.writerow([run, name, row["unit"], row["group"], row["n"],
                                 row["mae"], row["coverage"]])

    with open(tables_dir / "plan_optimality.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trace_id", "class", "min_steps", "executed", "po"])
        for row in report["workflow_metrics"]["plan_optimality"]["traces"]:
            writer.writerow([row["trace_id"], row["class"], row["min_steps"],
                             row["executed"], row["po"]])

    with open(tables_dir / "latency.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["request", "kind", "injected_s", "latency_s", "ok"])
        for row in report["workflow_metrics"]["latency"]["requests"]:
            writer.writerow([row["request"], row["kind"], row["injected_s"],
                             row["latency_s"], row["ok"]])

    with open(tables_dir / "directional_agreement.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "scenario", "da"])
        for method, summary in report["adjustment_metrics"]["da"].items():
            for i, value in enumerate(summary["per_scenario"]):
                writer.writerow([method, i, value])


@main.command("eval")
@click.argument("section", type=click.Choice(["all", "nutrients", "workflow", "adjustment"]),
                default="all")
@click.option("--seed", type=int, default=0)
@click.option("--scenarios", "scenario_count", type=int, default=20)
@click.option("--class-mix", default=None,
              help="Three comma-separated proportions: insufficient,near,excessive.")
@click.option("--mask-drop-p", type=float, default=0.39)
@click.option("--noise", type=float, default=0.0)
@click.option("--flip-p", type=float, default=0.1)
@click.option("--random-seeds", type=int, default=50)
@click.option("--meal-fixtures", type=click.Path(exists=True), default=None)
@click.option("--trace-fixtures", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None, help="Report JSON path (default stdout).")
@click.option("--tables-dir", type=click.Path(), default=None,
              help="Also emit one delimited table per metric family.")
def eval_cmd(section, seed, scenario_count, class_mix, mask_drop_p, noise, flip_p,
             random_seeds, meal_fixtures, trace_fixtures, out, tables_dir):
    """Run the evaluation suite and emit the structured report."""
    config = EvalConfig(
        seed=seed,
        scenario_count=scenario_count,
        class_mix=_parse_mix(class_mix) or EvalConfig().class_mix,
        mask_drop_p=mask_drop_p,
        noise=noise,
        flip_p=flip_p,
        random_seeds=random_seeds,
        meal_fixture_path=meal_fixtures,
        trace_fixture_path=trace_fixtures,
    )
    report = run_eval_suite(config)
    if section != "all":
        keep = {"nutrients": "nutrient_metrics", "workflow": "workflow_metrics",
                "adjustment": "adjustment_metrics"}[section]
        report = {"config": report["config"], keep: report[keep]}
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text + "\n")
        click.echo(f"report written to {out}")
    else:
        click.echo(text)
    if tables_dir:
        if section != "all":
            raise click.UsageError("--tables-dir requires the full suite (section 'all')")
        _write_tables(report, Path(tables_dir))
        click.echo(f"tables written to {tables_dir}")


if __name__ == "__main__":
    sys.exit(main())
