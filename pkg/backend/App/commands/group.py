from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional

import typer

from App.calibration.data_loader import read_annotations, read_features, write_groups
from App.calibration.errors import ConfigError
from App.calibration.grouping import (
    THRESHOLD_OPS,
    ThresholdRule,
    fit_clusters,
    groups_from_annotations,
    groups_from_thresholds,
)
from App.calibration.manifest import RunRecorder
from App.commands.common import command_errors, split_list

logger = logging.getLogger(__name__)

MODES = ("annotate", "kmeans", "threshold")


def parse_rule(text: str) -> ThresholdRule:
    """``column>=cutoff:name`` or ``column<cutoff:name``."""
    try:
        condition, name = text.rsplit(":", 1)
        for op in sorted(THRESHOLD_OPS, key=len, reverse=True):
            if op in condition:
                column, cutoff = condition.split(op, 1)
                return ThresholdRule(column=column.strip(), op=op, cutoff=float(cutoff), name=name.strip())
    except ValueError:
        pass
    raise ConfigError(f"cannot parse threshold rule {text!r}; expected 'column>=cutoff:name'")


def group_command(
    mode: str = typer.Option(..., "--mode", help="annotate, kmeans or threshold"),
    input_path: Path = typer.Option(..., "--in", help="Annotation or feature CSV"),
    output: Path = typer.Option(..., "--out", help="Group CSV with g:<name> columns"),
    columns: Optional[str] = typer.Option(None, "--columns", help="Comma-separated input columns to use"),
    k: Optional[int] = typer.Option(None, "--k", help="Number of clusters (kmeans)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="k-means seed (required for kmeans)"),
    standardize: bool = typer.Option(False, "--standardize", help="Standardize features before k-means"),
    rules: List[str] = typer.Option([], "--rule", help="Threshold rule 'column>=cutoff:name' (repeatable)"),
):
    """Build group membership columns"""
    with command_errors("group"):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
        selected = split_list(columns) or None
        recorder = RunRecorder(
            "group",
            {"mode": mode, "columns": selected, "k": k, "standardize": standardize, "rules": list(rules)},
            seed=seed,
        )
        recorder.add_inputs([input_path])
        if mode == "annotate":
            membership, names = read_annotations(input_path, selected)
            groups = groups_from_annotations(membership, names).groups
        elif mode == "kmeans":
            if k is None or seed is None:
                raise ConfigError("kmeans mode needs --k and --seed")
            result = fit_clusters(read_features(input_path), k, seed, standardize, columns=selected)
            groups = result.groups
        else:
            if not rules:
                raise ConfigError("threshold mode needs at least one --rule")
            groups = groups_from_thresholds(read_features(input_path, selected), [parse_rule(r) for r in rules])
        write_groups(groups, output)
        recorder.finish([output])
        logger.info(f"Wrote {len(groups.user_names)} group columns to {output}")
