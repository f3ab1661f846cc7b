from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import typer
from rich.table import Table

from App.calibration.benchmark import BENCH_METHODS, run_benchmark, write_table
from App.calibration.errors import ConfigError
from App.calibration.manifest import RunRecorder
from App.calibration.settings import resolve_fit_config
from App.calibration.synthetic import RNG_NAME, SyntheticSpec, benchmark_spec, load_spec
from App.commands.common import command_errors, console, split_list

logger = logging.getLogger(__name__)


def bench_command(
    seed: int = typer.Option(..., "--seed", help="First seed; repeat r uses seed + r"),
    output: Path = typer.Option(..., "--out", help="Result table CSV"),
    methods: str = typer.Option(",".join(BENCH_METHODS), "--methods", help="Comma-separated methods"),
    repeats: int = typer.Option(5, "--repeats", help="Number of seeds"),
    spec_path: Optional[Path] = typer.Option(None, "--spec", help="YAML synthetic spec (default: benchmark spec)"),
    n: Optional[int] = typer.Option(None, "--n", help="Override the row count"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon"),
    val_fraction: Optional[float] = typer.Option(None, "--val-fraction"),
    test_fraction: float = typer.Option(0.5, "--test-fraction", help="Held-out share of each generated dataset"),
    jobs: int = typer.Option(1, "--jobs", help="Parallel workers for (method, seed) cells"),
    config_path: Optional[Path] = typer.Option(None, "--config", help="YAML fit defaults (or MULTICAL_CONFIG)"),
):
    """Run the method x seed benchmark on synthetic data"""
    with command_errors("bench"):
        if repeats < 1:
            raise ConfigError(f"--repeats must be at least 1, got {repeats}")
        spec = load_spec(spec_path) if spec_path is not None else benchmark_spec()
        if n is not None:
            spec = SyntheticSpec.model_validate({**spec.model_dump(), "n": n})
        config = resolve_fit_config(config_path, alpha=alpha, epsilon=epsilon, val_fraction=val_fraction)
        seeds = [seed + r for r in range(repeats)]
        method_list = split_list(methods)
        recorder = RunRecorder(
            "bench",
            {
                "methods": method_list,
                "seeds": seeds,
                "test_fraction": test_fraction,
                "spec": spec.model_dump(mode="json"),
                "fit": config.model_dump(mode="json"),
            },
            seed=seed,
        )
        recorder.add_inputs([spec_path, config_path])
        table = run_benchmark(spec, method_list, seeds, config, test_fraction, n_jobs=jobs)
        write_table(table, output)
        recorder.finish([output], rng=RNG_NAME)

        view = Table(title=f"held-out results, {len(seeds)} seeds")
        for column in ("method", "mse", "accuracy", "max_violation"):
            view.add_column(column)
        for _, row in table[table["stat"] == "mean"].iterrows():
            view.add_row(row["method"], f"{row['mse']:.5f}", f"{row['accuracy']:.4f}", f"{row['max_violation']:.6f}")
        console.print(view)
