"""Command-line entry: extract embeddings or serve the provider protocol."""

from __future__ import annotations

import sys

import click

from .extract import ExtractionJob, extract
from .models import POOLINGS
from .server import ServiceConfig, build_app


@click.group()
def cli():
    pass


@cli.command("extract")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--text-model", default="stub:0", show_default=True)
@click.option("--speech-model", default="stub:0", show_default=True)
@click.option("--asr-model", default="stub:0", show_default=True)
@click.option("--pooling", type=click.Choice(list(POOLINGS)), default="mean", show_default=True)
@click.option("--layer", default="final", show_default=True)
@click.option("--text-dim", type=int, default=16, show_default=True)
@click.option("--acoustic-dim", type=int, default=24, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--audio-root", type=click.Path(), default=None)
@click.option("--device", default=None)
def extract_cmd(**kwargs):
    """Extract embeddings and pseudo-labels for a manifest."""
    job = ExtractionJob(
        manifest_path=kwargs["manifest"],
        output_dir=kwargs["out_dir"],
        text_model=kwargs["text_model"],
        speech_model=kwargs["speech_model"],
        asr_model=kwargs["asr_model"],
        pooling=kwargs["pooling"],
        layer=kwargs["layer"],
        text_dim=kwargs["text_dim"],
        acoustic_dim=kwargs["acoustic_dim"],
        batch_size=kwargs["batch_size"],
        audio_root=kwargs["audio_root"],
        device=kwargs["device"],
    )
    result = extract(job)
    click.echo(f"extracted {result.n_rows} rows to {kwargs['out_dir']}")
    if result.failed_rows:
        click.echo(f"{len(result.failed_rows)} rows failed; see {result.errors}", err=True)
        sys.exit(2)


@cli.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--text-model", default="stub:0", show_default=True)
@click.option("--speech-model", default="stub:0", show_default=True)
@click.option("--asr-model", default="stub:0", show_default=True)
@click.option("--text-dim", type=int, default=16, show_default=True)
@click.option("--acoustic-dim", type=int, default=24, show_default=True)
@click.option("--pooling", type=click.Choice(list(POOLINGS)), default="mean", show_default=True)
@click.option("--layer", default="final", show_default=True)
@click.option("--max-batch", type=int, default=64, show_default=True)
@click.option("--audio-root", type=click.Path(), default=None)
@click.option("--token", default=None, help="Require this bearer token on every request.")
@click.option("--device", default=None)
def serve_cmd(host, port, **kwargs):
    """Serve the provider wire protocol over HTTP."""
    import uvicorn

    config = ServiceConfig(
        text_model=kwargs["text_model"],
        speech_model=kwargs["speech_model"],
        asr_model=kwargs["asr_model"],
        text_dim=kwargs["text_dim"],
        acoustic_dim=kwargs["acoustic_dim"],
        pooling=kwargs["pooling"],
        layer=kwargs["layer"],
        max_batch=kwargs["max_batch"],
        audio_root=kwargs["audio_root"],
        token=kwargs["token"],
        device=kwargs["device"],
    )
    uvicorn.run(build_app(config), host=host, port=port, log_level="info")


def main():
    cli()


if __name__ == "__main__":
    main()
