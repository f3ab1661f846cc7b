from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import typer

from App.calibration import metrics
from App.calibration.calibrators import predict_dataset
from App.calibration.data_model import Grid
from App.calibration.errors import ConfigError
from App.calibration.manifest import RunRecorder
from App.calibration.model_io import load_model
from App.calibration.report_generator import generate_report
from App.commands.common import command_errors, console, load_inputs

logger = logging.getLogger(__name__)


def evaluate_command(
    input_path: Path = typer.Option(..., "--in", help="Dataset CSV (score,label,g:<name>...)"),
    output: Path = typer.Option(..., "--out", help="Report JSON to write"),
    groups: Optional[Path] = typer.Option(None, "--groups", help="Extra group CSV merged by column"),
    model_path: Optional[Path] = typer.Option(None, "--model", help="Apply this model before evaluating"),
    m: Optional[int] = typer.Option(None, "--m", help="Grid resolution (default: the model's, else distinct scores)"),
    ece_bins: Optional[int] = typer.Option(None, "--ece-bins", help="ECE bin count (default m, else 10)"),
    per_group: Optional[Path] = typer.Option(None, "--per-group", help="Per-group CSV to write"),
    html: Optional[Path] = typer.Option(None, "--html", help="HTML rendering of the report"),
):
    """Compute calibration metrics for a scored dataset"""
    with command_errors("evaluate"):
        if m is not None and m < 1:
            raise ConfigError(f"--m must be a positive integer, got {m}")
        recorder = RunRecorder("evaluate", {"m": m, "ece_bins": ece_bins})
        recorder.add_inputs([input_path, groups, model_path])
        dataset = load_inputs(input_path, groups)
        grid = Grid(m) if m is not None else None
        if model_path is not None:
            model = load_model(model_path)
            dataset = predict_dataset(model, dataset)
            grid = grid or model.grid
        report = metrics.report(dataset, grid, ece_bins=ece_bins)
        generate_report(report, output, per_group, html, title=f"Calibration report: {input_path.name}")
        recorder.finish([output, per_group, html])
        console.print(
            f"mse {report.mse:.6f}  asce {report.asce:.6f}  ece {report.ece:.6f}  "
            f"max violation {report.max_violation:.6f} ({report.worst_group})"
        )
