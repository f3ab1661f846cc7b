from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import typer

from App.calibration.data_loader import write_dataset
from App.calibration.manifest import RunRecorder
from App.calibration.model_io import save_truth
from App.calibration.synthetic import RNG_NAME, SyntheticSpec, benchmark_spec, generate, load_spec
from App.commands.common import command_errors

logger = logging.getLogger(__name__)


def synth_command(
    seed: int = typer.Option(..., "--seed", help="Generator seed; overrides the spec file's seed"),
    output: Path = typer.Option(..., "--out", help="Dataset CSV to write"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="Truth-table JSON to write"),
    spec_path: Optional[Path] = typer.Option(None, "--spec", help="YAML synthetic spec (default: the benchmark spec)"),
    n: Optional[int] = typer.Option(None, "--n", help="Override the row count"),
):
    """Generate a synthetic dataset with known conditional probabilities"""
    with command_errors("synth"):
        spec = load_spec(spec_path, seed=seed) if spec_path is not None else benchmark_spec(seed=seed)
        if n is not None:
            spec = SyntheticSpec.model_validate({**spec.model_dump(), "n": n})
        recorder = RunRecorder("synth", spec.model_dump(mode="json"), seed=seed)
        recorder.add_inputs([spec_path])
        result = generate(spec)
        write_dataset(result.dataset, output)
        if truth is not None:
            save_truth(result.truth, truth)
        recorder.finish([output, truth], rng=RNG_NAME)
        logger.info(f"Wrote {result.dataset.n} rows to {output}")
