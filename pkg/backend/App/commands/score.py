from __future__ import annotations

import logging
from pathlib import Path

import typer

from App.calibration.data_loader import read_logits, write_scores
from App.calibration.manifest import RunRecorder
from App.calibration.scoring import SCORE_KINDS, score_batch
from App.calibration.errors import ConfigError
from App.commands.common import command_errors

logger = logging.getLogger(__name__)


def score_command(
    kind: str = typer.Option(..., "--kind", help=f"One of: {', '.join(SCORE_KINDS)}"),
    input_path: Path = typer.Option(..., "--in", help="CSV of logits or log-probabilities"),
    output: Path = typer.Option(..., "--out", help="Score CSV to write"),
):
    """Turn logits into initial confidence scores"""
    with command_errors("score"):
        if kind not in SCORE_KINDS:
            raise ConfigError(f"unknown score kind {kind!r}; expected columns: {SCORE_KINDS}")
        recorder = RunRecorder("score", {"kind": kind})
        recorder.add_inputs([input_path])
        rows, labels = read_logits(input_path, kind)
        scores = score_batch(kind, rows)
        write_scores(scores, output, labels)
        recorder.finish([output])
        logger.info(f"Wrote {len(scores)} {kind} scores to {output}")
