"""Method x seed grid on synthetic data, with mean/std aggregate rows."""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from App.calibration import metrics
from App.calibration.calibrators import METHODS, FitConfig, fit_method, predict
from App.calibration.data_model import split
from App.calibration.errors import ConfigError
from App.calibration.synthetic import SyntheticSpec, generate

logger = logging.getLogger(__name__)

UNCALIBRATED = "uncalib"
BENCH_METHODS = [UNCALIBRATED, "hb", "ls", "gcur", "gculr", "ighb", "ighb_tau", "ighb_ls", "iglb"]
METRIC_COLUMNS = ["mse", "accuracy", "asce", "ece", "max_violation", "rounds"]


def check_methods(methods: Sequence[str]) -> List[str]:
    methods = [m.lower() for m in methods]
    unknown = [m for m in methods if m != UNCALIBRATED and m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}; choose from {', '.join(BENCH_METHODS)}")
    if len(set(methods)) != len(methods):
        raise ConfigError(f"methods listed more than once: {methods}")
    return methods


def evaluate_scores(dataset, grid) -> Dict[str, float]:
    """Held-out metrics; level-set metrics use the grid-rounded scores."""
    rounded = dataset.with_scores(grid.round(dataset.scores))
    violations = metrics.group_violations(rounded, grid)
    row = {
        "mse": metrics.mse(dataset),
        "accuracy": metrics.accuracy(dataset),
        "asce": metrics.asce(rounded, grid),
        "ece": metrics.ece(dataset, grid.m),
        "max_violation": float(np.nanmax(violations)),
    }
    for g, name in enumerate(dataset.groups.names):
        mask = rounded.groups.membership[:, g]
        row[f"gasce:{name}"] = metrics.gasce(rounded, grid, g) if mask.any() else float("nan")
    return row


def run_cell(spec: SyntheticSpec, method: str, seed: int, config: FitConfig, test_fraction: float) -> Dict:
    data = generate(spec.model_copy(update={"seed": seed})).dataset
    train, test = split(data, 1.0 - test_fraction, seed)
    grid = config.grid
    rounds = 0
    if method == UNCALIBRATED:
        predicted = test
    else:
        model, trace = fit_method(method, train, config.model_copy(update={"seed": seed}))
        predicted = test.with_scores(predict(model, test.scores, test.groups))
        rounds = trace.rounds if trace is not None else 0
    row = {"method": method, "seed": seed, "stat": "value", "rounds": rounds}
    row.update(evaluate_scores(predicted, grid))
    logger.debug(f"bench cell {method}/{seed}: mse {row['mse']:.6g}, max violation {row['max_violation']:.6g}")
    return row


def run_benchmark(
    spec: SyntheticSpec,
    methods: Sequence[str],
    seeds: Sequence[int],
    config: FitConfig,
    test_fraction: float = 0.5,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """One row per (method, seed) then mean and std rows per method; order is fixed."""
    methods = check_methods(methods)
    if not seeds:
        raise ConfigError("bench needs at least one seed")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must lie in (0, 1), got {test_fraction}")
    logger.info(f"Running {len(methods)} methods x {len(seeds)} seeds on n={spec.n}")
    rows = Parallel(n_jobs=n_jobs)(
        delayed(run_cell)(spec, method, int(seed), config, test_fraction) for method in methods for seed in seeds
    )
    values = pd.DataFrame(rows)
    metric_columns = METRIC_COLUMNS + sorted(c for c in values.columns if c.startswith("gasce:"))
    order = {m: i for i, m in enumerate(methods)}
    values = values.sort_values(
        by=["method", "seed"], key=lambda col: col.map(order) if col.name == "method" else col
    ).reset_index(drop=True)

    aggregates = []
    for method in methods:
        block = values.loc[values["method"] == method, metric_columns].astype(float)
        for stat, series in (("mean", block.mean()), ("std", block.std(ddof=1))):
            aggregates.append({"method": method, "seed": None, "stat": stat, **series.to_dict()})
    table = pd.concat([values, pd.DataFrame(aggregates)], ignore_index=True)
    table["seed"] = table["seed"].astype("Int64")
    return table[["method", "seed", "stat"] + metric_columns]


def write_table(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")


def summary(table: pd.DataFrame, metric: str = "mse") -> Dict[str, float]:
    means = table[table["stat"] == "mean"]
    return dict(zip(means["method"], means[metric]))


def per_seed(table: pd.DataFrame, metric: str, method: str) -> pd.Series:
    rows = table[(table["stat"] == "value") & (table["method"] == method)]
    return rows.set_index("seed")[metric]
