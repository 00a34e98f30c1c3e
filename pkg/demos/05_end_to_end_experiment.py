"""
A complete synthetic experiment
===============================

Builds a two-cluster corpus on disk in the real file formats, wires
file-backed embedding and pseudo-label providers plus a deterministic
noise-model stand-in for the in-context transcriber, then runs the full
method x k sweep. The planted geometry makes acoustically-aware selection
pay off: the two-stage method wins at every context size.

The same experiment runs from the command line as

    ticl --config <fixture>/config.json --output-dir <out> evaluate
"""

import tempfile
from pathlib import Path

from ticl.config import load_experiment_config
from ticl.harness import render_report, run_sweep
from ticl.store import ingest_manifest

# The fixture builder lives with the test suite; an experiment of your own
# only needs the same files: manifests, embedding files, a config document.
import sys

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from planted import build_planted_fixture  # noqa: E402

workdir = Path(tempfile.mkdtemp(prefix="ticl-e2e-"))
config_path = build_planted_fixture(workdir / "fixture")
print("fixture written to", config_path.parent)

config = load_experiment_config(config_path)
providers = config.build_providers()
test_records = ingest_manifest(config.test_manifest).records

report = run_sweep(
    config.store,
    test_records,
    providers,
    config.eval,
    dataset=config.dataset,
    jobs=config.jobs,
)

print()
print(render_report(report, "aligned_text"))
print("failures:", report.failures)
print("provenance keys:", sorted(report.provenance))
