"""CSV readers and writers for datasets, group columns, features and logits.

Line numbers in ParseError count the header as line 1.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from App.calibration.data_model import ALL_GROUP, GroupMatrix, ScoredDataset, validate_dataset
from App.calibration.errors import DataError, DataValidationError, ParseError, UnknownColumn
from App.calibration.grouping import FeatureTable
from App.calibration.scoring import SequenceLogProbs

logger = logging.getLogger(__name__)

GROUP_PREFIX = "g:"
PathLike = Union[str, Path]


def _read_table(path: PathLike) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise ParseError(1, "file is empty") from e
    except pd.errors.ParserError as e:
        raise ParseError(_parser_line(str(e)), str(e)) from e
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _parser_line(message: str) -> int:
    # pandas reports "Expected 2 fields in line 4, saw 3"
    words = message.replace(",", " ").split()
    for before, word in zip(words, words[1:]):
        if before == "line" and word.isdigit():
            return int(word)
    return 0


def _floats(frame: pd.DataFrame, column: str) -> np.ndarray:
    if column not in frame.columns:
        raise UnknownColumn(column)
    out = np.empty(len(frame))
    for i, cell in enumerate(frame[column]):
        try:
            out[i] = float(cell)
        except (TypeError, ValueError):
            raise ParseError(i + 2, f"column '{column}': cannot parse {cell!r} as a number") from None
    return out


def _bits(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = _floats(frame, column)
    bad = np.flatnonzero((values != 0) & (values != 1))
    if bad.size:
        raise ParseError(int(bad[0]) + 2, f"column '{column}': group cells must be 0 or 1")
    return values.astype(bool)


def _group_columns(frame: pd.DataFrame) -> Tuple[np.ndarray, List[str]]:
    columns = [c for c in frame.columns if c.startswith(GROUP_PREFIX)]
    names, bits = [], []
    for column in columns:
        name = column[len(GROUP_PREFIX):]
        values = _bits(frame, column)
        if name == ALL_GROUP:
            if not values.all():
                raise DataValidationError(f"column '{column}' must be all ones")
            continue
        names.append(name)
        bits.append(values)
    membership = np.column_stack(bits) if bits else np.zeros((len(frame), 0), dtype=bool)
    return membership, names


def _format_float(x: float) -> str:
    return repr(float(x))


def read_dataset(path: PathLike) -> ScoredDataset:
    """Dataset CSV: ``score,label,g:<name>...``; ``ALL`` is added when absent."""
    frame = _read_table(path)
    scores = _floats(frame, "score")
    labels = _floats(frame, "label")
    membership, names = _group_columns(frame)
    dataset = validate_dataset(scores, labels, membership, names)
    logger.info(
        f"Loaded {dataset.n} rows and {dataset.groups.k} groups from {path}"
        + (f" (empty groups: {dataset.groups.empty_groups})" if dataset.groups.empty_groups else "")
    )
    return dataset


def write_dataset(dataset: ScoredDataset, path: PathLike) -> None:
    frame = pd.DataFrame(
        {
            "score": [_format_float(s) for s in dataset.scores],
            "label": dataset.labels.astype(np.int64),
        }
    )
    for name in dataset.groups.user_names:
        frame[GROUP_PREFIX + name] = dataset.groups.column(name).astype(np.int64)
    frame.to_csv(path, index=False, lineterminator="\n")


def read_groups(path: PathLike) -> GroupMatrix:
    """Group CSV: ``g:<name>`` columns only, mergeable into a dataset by name."""
    frame = _read_table(path)
    membership, names = _group_columns(frame)
    if not names and not any(c.startswith(GROUP_PREFIX) for c in frame.columns):
        raise DataValidationError(f"{path} has no '{GROUP_PREFIX}<name>' columns")
    return GroupMatrix.from_columns(membership, names)


def write_groups(groups: GroupMatrix, path: PathLike) -> None:
    frame = pd.DataFrame(
        {GROUP_PREFIX + name: groups.column(name).astype(np.int64) for name in groups.user_names}
    )
    frame.to_csv(path, index=False, lineterminator="\n")


def read_annotations(path: PathLike, columns: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, List[str]]:
    """0/1 annotation columns; a ``g:`` prefix on the header is stripped."""
    frame = _read_table(path)
    columns = list(columns) if columns else list(frame.columns)
    bits = [_bits(frame, c) for c in columns]
    names = [c[len(GROUP_PREFIX):] if c.startswith(GROUP_PREFIX) else c for c in columns]
    membership = np.column_stack(bits) if bits else np.zeros((len(frame), 0), dtype=bool)
    return membership, names


def read_features(path: PathLike, columns: Optional[Sequence[str]] = None) -> FeatureTable:
    frame = _read_table(path)
    columns = list(columns) if columns else list(frame.columns)
    return FeatureTable(pd.DataFrame({c: _floats(frame, c) for c in columns}))


def read_logits(path: PathLike, kind: str) -> Tuple[List, Optional[np.ndarray]]:
    """Per-row arguments for ``scoring.score_batch`` plus the label column when present.

    true_false: ``logit_true,logit_false``; multiple_choice: ``choice_*`` columns;
    inverse_perplexity: ``prompt_len`` and ``;``-separated ``logprobs``.
    """
    frame = _read_table(path)
    labels = _bits(frame, "label").astype(np.int64) if "label" in frame.columns else None
    if kind == "true_false":
        rows = list(zip(_floats(frame, "logit_true"), _floats(frame, "logit_false")))
    elif kind == "multiple_choice":
        choices = [c for c in frame.columns if c.startswith("choice_")]
        if len(choices) < 2:
            raise UnknownColumn("choice_2")
        values = np.column_stack([_floats(frame, c) for c in choices])
        rows = list(values)
    elif kind == "inverse_perplexity":
        prompt = _floats(frame, "prompt_len")
        if "logprobs" not in frame.columns:
            raise UnknownColumn("logprobs")
        rows = []
        for i, (t0, cell) in enumerate(zip(prompt, frame["logprobs"])):
            try:
                logprobs = [float(v) for v in cell.split(";")] if cell.strip() else []
            except ValueError:
                raise ParseError(i + 2, f"cannot parse log-probabilities {cell!r}") from None
            if t0 != int(t0) or t0 < 0:
                raise ParseError(i + 2, f"prompt_len must be a nonnegative integer, got {t0!r}")
            rows.append(SequenceLogProbs(np.array(logprobs), int(t0)))
    else:
        raise DataValidationError(f"unknown score kind {kind!r}")
    return rows, labels


def write_scores(scores: np.ndarray, path: PathLike, labels: Optional[np.ndarray] = None) -> None:
    frame = pd.DataFrame({"score": [_format_float(s) for s in scores]})
    if labels is not None:
        frame["label"] = labels.astype(np.int64)
    frame.to_csv(path, index=False, lineterminator="\n")

