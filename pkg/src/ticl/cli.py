"""Command-line entry point wiring the full pipeline.

ingest -> attach-embeddings -> validate build and check a candidate store;
retrieve writes context bundles for a test set; evaluate runs the method x k
sweep and writes the audit, csv, json and aligned-text report artifacts;
report re-renders a saved report.

Every command is idempotent given identical inputs and config. Exit codes:
1 usage or configuration, 2 data, 3 provider. Errors go to stderr as one
JSON line {"error": <class>, "message": <text>}.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .config import load_experiment_config
from .errors import ConfigError, DataError, MissingPseudoLabelEmbedding, ProviderError, TiclError
from .harness import (
    EvalReport,
    FileBundleSink,
    build_bundle,
    prepare_query,
    render_report,
    run_sweep,
    write_audit_file,
)
from .retrieval import RetrievalConfig, bundle_to_json_line
from .store import attach_embeddings, ingest_manifest, load_store, save_store, validate

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


@click.group()
@click.version_option(version=__version__, prog_name="ticl")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Experiment config document (JSON).")
@click.option("--output-dir", type=click.Path(), default=".", show_default=True, help="Directory for produced artifacts.")
@click.option("--jobs", type=int, default=None, help="Worker count for parallel evaluation (default: processor count).")
@click.option("--seed", type=int, default=None, help="Override every seed in the config.")
@click.option("--verbose", "-v", is_flag=True, default=False)
@click.pass_context
def cli(ctx, config_path, output_dir, jobs, seed, verbose):
    ctx.ensure_object(dict)
    ctx.obj.update(
        config_path=config_path, output_dir=Path(output_dir), jobs=jobs, seed=seed, verbose=verbose
    )


def _note(ctx, message: str) -> None:
    if ctx.obj.get("verbose"):
        click.echo(message, err=True)


def _load_config(ctx, override: str | None = None):
    path = override or ctx.obj.get("config_path")
    if not path:
        raise ConfigError("this command needs --config")
    return load_experiment_config(path, seed_override=ctx.obj.get("seed"))


def _effective_jobs(ctx, config) -> int:
    if ctx.obj.get("jobs") is not None:
        return max(1, ctx.obj["jobs"])
    if config is not None and config.jobs:
        return max(1, config.jobs)
    import os

    return os.cpu_count() or 1


@cli.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Store directory to create.")
@click.pass_context
def ingest(ctx, manifest, out):
    """Build a candidate store (embeddings pending) from a manifest."""
    store = ingest_manifest(manifest)
    save_store(store, out)
    _note(ctx, f"ingested {len(store)} records")
    click.echo(f"store written to {out} ({len(store)} records)")


@cli.command("attach-embeddings")
@click.argument("store_dir", type=click.Path(exists=True))
@click.argument("emb_file", type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["text", "acoustic"]), required=True)
@click.pass_context
def attach(ctx, store_dir, emb_file, kind):
    """Bind an embedding file to a store, row i to record i."""
    store = load_store(store_dir)
    store = attach_embeddings(store, emb_file, kind)
    save_store(store, store_dir)
    dim = store.text_dim if kind == "text" else store.acoustic_dim
    click.echo(f"attached {len(store)} {kind} embeddings (dim {dim})")


@cli.command("validate")
@click.argument("store_dir", type=click.Path(exists=True))
@click.pass_context
def validate_cmd(ctx, store_dir):
    """Check every store invariant; report-only."""
    store = load_store(store_dir)
    report = validate(store)
    click.echo(f"{len(report.violations)} violations")
    for index, message in report.violations:
        click.echo(f"  record {index}: {message}")
    if report.unusable_records:
        click.echo(f"{len(report.unusable_records)} unusable records (empty transcription)")
    if not report.ok:
        raise DataError(f"store has {len(report.violations)} violations")


@cli.command()
@click.option("--config", "config_override", type=click.Path(), default=None)
@click.option("--method", type=click.Choice(["ticl", "ticl_plus"]), required=True)
@click.option("--k", type=int, default=None, help="Context size (overrides config).")
@click.option("--m", type=int, default=None, help="Stage-1 pool size (overrides config).")
@click.option("--out", type=click.Path(), default=None, help="Bundle file (JSONL).")
@click.pass_context
def retrieve(ctx, config_override, method, k, m, out):
    """Write one serialized context bundle per test utterance."""
    config = _load_config(ctx, config_override)
    retrieval = config.retrieval
    if k is not None or m is not None:
        retrieval = RetrievalConfig(
            M=m if m is not None else retrieval.M,
            K=k if k is not None else retrieval.K,
            ordering=retrieval.ordering,
            exclude_ids=retrieval.exclude_ids,
        )
    providers = config.build_providers()
    test_records = ingest_manifest(config.test_manifest).records
    _note(ctx, f"retrieving {method} K={retrieval.K} M={retrieval.M} for {len(test_records)} utterances")

    lines: list[str] = []
    missing_label: list[str] = []
    for record in test_records:
        query = prepare_query(record, providers)
        try:
            bundle = build_bundle(method, config.store, query, retrieval)
        except MissingPseudoLabelEmbedding:
            missing_label.append(record.utterance_id)
            continue
        lines.append(bundle_to_json_line(bundle))
    if missing_label:
        raise DataError(
            "empty pseudo-labels for utterances: " + ", ".join(missing_label)
        )

    out_path = (
        Path(out)
        if out
        else ctx.obj["output_dir"] / f"bundles_{method}_k{retrieval.K}.jsonl"
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    click.echo(f"wrote {len(lines)} bundles to {out_path}")


@cli.command()
@click.option("--config", "config_override", type=click.Path(), default=None)
@click.pass_context
def evaluate(ctx, config_override):
    """Run the full sweep and write report + audit artifacts."""
    config = _load_config(ctx, config_override)
    providers = config.build_providers()
    test_records = ingest_manifest(config.test_manifest).records
    output_dir = ctx.obj["output_dir"]
    output_dir.mkdir(parents=True, exist_ok=True)
    jobs = _effective_jobs(ctx, config)
    _note(ctx, f"evaluating {len(test_records)} utterances with {jobs} workers")

    sink = FileBundleSink(output_dir / "bundles")
    report = run_sweep(
        config.store,
        test_records,
        providers,
        config.eval,
        dataset=config.dataset,
        jobs=jobs,
        bundle_sink=sink,
    )
    write_audit_file(report, output_dir / "audit.jsonl")
    (output_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (output_dir / "report.csv").write_text(render_report(report, "csv"), encoding="utf-8")
    (output_dir / "report.txt").write_text(render_report(report, "aligned_text"), encoding="utf-8")
    click.echo(render_report(report, "aligned_text"), nl=False)
    if report.failures:
        click.echo(f"{len(report.failures)} per-utterance failures (see report.json)")


@cli.command("report")
@click.argument("report_json", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["aligned_text", "csv"]), default="aligned_text")
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def report_cmd(ctx, report_json, fmt, out):
    """Re-render a saved report."""
    doc = json.loads(Path(report_json).read_text(encoding="utf-8"))
    rendered = render_report(EvalReport.from_dict(doc), fmt)
    if out:
        Path(out).write_text(rendered, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(rendered, nl=False)


def _emit_error(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        return _emit_error(exc, EXIT_USAGE)
    except ConfigError as exc:
        return _emit_error(exc, EXIT_USAGE)
    except ProviderError as exc:
        return _emit_error(exc, EXIT_PROVIDER)
    except DataError as exc:
        return _emit_error(exc, EXIT_DATA)
    except TiclError as exc:
        return _emit_error(exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
