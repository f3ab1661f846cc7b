from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import typer

from App.calibration.calibrators import METHODS, FitTrace, fit_method
from App.calibration.errors import ConfigError
from App.calibration.manifest import RunRecorder
from App.calibration.model_io import save_model, save_trace
from App.calibration.settings import resolve_fit_config
from App.commands.common import command_errors, console, load_inputs, split_list

logger = logging.getLogger(__name__)


def calibrate_command(
    method: str = typer.Option(..., "--method", help=f"One of: {', '.join(METHODS)}"),
    seed: int = typer.Option(..., "--seed", help="Seed for the calibration/validation split"),
    input_path: Path = typer.Option(..., "--in", help="Dataset CSV (score,label,g:<name>...)"),
    output: Path = typer.Option(..., "--out", help="Model JSON to write"),
    groups: Optional[Path] = typer.Option(None, "--groups", help="Extra group CSV merged by column"),
    trace: Optional[Path] = typer.Option(None, "--trace", help="Fit trace JSON to write"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="Target violation; sets m = ceil(1/alpha)"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="Minimum bin mass (iglb)"),
    val_fraction: Optional[float] = typer.Option(None, "--val-fraction", help="Validation share (iglb)"),
    max_rounds: Optional[int] = typer.Option(None, "--max-rounds", help="Round cap (default ceil(4/alpha^2))"),
    comparators: Optional[str] = typer.Option(None, "--comparators", help="Comma-separated subset of EQ,LE,GE"),
    transform: Optional[str] = typer.Option(None, "--transform", help="constant or logit_linear"),
    config_path: Optional[Path] = typer.Option(None, "--config", help="YAML fit defaults (or MULTICAL_CONFIG)"),
):
    """Fit a calibrator and save it as JSON"""
    with command_errors("calibrate"):
        if method.lower() not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        config = resolve_fit_config(
            config_path,
            alpha=alpha,
            epsilon=epsilon,
            val_fraction=val_fraction,
            max_rounds=max_rounds,
            seed=seed,
            comparators=[c.upper() for c in split_list(comparators)] or None,
            transform=transform,
        )
        recorder = RunRecorder("calibrate", {"method": method, **config.model_dump(mode="json")}, seed=seed)
        recorder.add_inputs([input_path, groups, config_path])
        dataset = load_inputs(input_path, groups)

        model, fit_trace = fit_method(method, dataset, config)
        save_model(model, output)
        if trace is not None:
            if fit_trace is None:
                fit_trace = FitTrace(method=method.lower(), stop_reason="closed_form")
            save_trace(fit_trace, trace)
        recorder.finish([output, trace])
        rounds = f", {fit_trace.rounds} rounds ({fit_trace.stop_reason})" if fit_trace is not None else ""
        console.print(f"[bold]{method.lower()}[/bold]: {len(model.patches)} patches{rounds} -> {output}")
