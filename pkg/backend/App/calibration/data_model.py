"""Core value types shared by the calibration modules.

Every type validates itself at construction and is immutable afterwards, so
datasets and fitted models can be shared freely between worker threads.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logit

from App.calibration.errors import (
    DataValidationError,
    DegenerateSplit,
    DuplicateGroupName,
    GroupSchemaMismatch,
    LengthMismatch,
    NonBinaryLabel,
    ScoreOutOfRange,
    Violation,
)

logger = logging.getLogger(__name__)

ALL_GROUP = "ALL"
DEFAULT_CLIP = 1e-6


class Comparator(str, Enum):
    EQ = "EQ"
    LE = "LE"
    GE = "GE"

    @property
    def order(self) -> int:
        return _COMPARATOR_ORDER[self]


_COMPARATOR_ORDER = {Comparator.EQ: 0, Comparator.LE: 1, Comparator.GE: 2}


class Method(str, Enum):
    HB = "HB"
    LS = "LS"
    GCUR = "GCUR"
    GCULR = "GCULR"
    IGHB = "IGHB"
    IGLB = "IGLB"

    @property
    def parametric(self) -> bool:
        return self in (Method.LS, Method.GCUR, Method.GCULR)


class TransformKind(str, Enum):
    CONSTANT = "constant"
    LOGIT_LINEAR = "logit_linear"


def _frozen(array: npt.ArrayLike, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def clipped_logit(values: np.ndarray, clip: float = DEFAULT_CLIP) -> np.ndarray:
    return logit(np.clip(values, clip, 1.0 - clip))


@dataclass(frozen=True)
class GroupMatrix:
    """Dense n x K boolean membership; column ``ALL`` is always present and all-true."""

    membership: np.ndarray
    names: Tuple[str, ...]

    def __post_init__(self):
        membership = _frozen(self.membership, bool)
        if membership.ndim != 2:
            raise LengthMismatch("group membership must be a two-dimensional matrix")
        names = tuple(str(n) for n in self.names)
        if len(names) != membership.shape[1] or not names:
            raise LengthMismatch(
                f"{len(names)} group names for {membership.shape[1]} membership columns"
            )
        seen = set()
        for name in names:
            if not name:
                raise DuplicateGroupName(name)
            if name in seen:
                raise DuplicateGroupName(name)
            seen.add(name)
        if ALL_GROUP not in seen:
            raise GroupSchemaMismatch([ALL_GROUP])
        if not membership[:, names.index(ALL_GROUP)].all():
            raise DataValidationError(f"reserved column {ALL_GROUP!r} must be all-true")
        object.__setattr__(self, "membership", membership)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_columns(cls, membership: npt.ArrayLike, names: Sequence[str]) -> "GroupMatrix":
        """Build a matrix from user columns, prepending ``ALL`` when it is absent."""
        matrix = np.asarray(membership, dtype=bool)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        names = list(names)
        if ALL_GROUP in names:
            return cls(matrix, tuple(names))
        full = np.ones((matrix.shape[0], 1), dtype=bool)
        return cls(np.hstack([full, matrix]), (ALL_GROUP, *names))

    @classmethod
    def marginal(cls, n: int) -> "GroupMatrix":
        return cls(np.ones((n, 1), dtype=bool), (ALL_GROUP,))

    @property
    def rows(self) -> int:
        return self.membership.shape[0]

    @property
    def k(self) -> int:
        return self.membership.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise GroupSchemaMismatch([name]) from None

    def column(self, name: str) -> np.ndarray:
        return self.membership[:, self.index(name)]

    @property
    def counts(self) -> np.ndarray:
        return self.membership.sum(axis=0)

    @property
    def empty_groups(self) -> List[str]:
        return [name for name, c in zip(self.names, self.counts) if c == 0]

    @property
    def user_names(self) -> Tuple[str, ...]:
        return tuple(n for n in self.names if n != ALL_GROUP)

    def subset(self, rows: np.ndarray) -> "GroupMatrix":
        return GroupMatrix(self.membership[rows], self.names)

    def select(self, names: Sequence[str]) -> "GroupMatrix":
        """Reorder columns to ``names``; extra columns are dropped."""
        missing = [n for n in names if n not in self.names]
        if missing:
            raise GroupSchemaMismatch(missing)
        cols = [self.names.index(n) for n in names]
        return GroupMatrix(self.membership[:, cols], tuple(names))

    def merge(self, other: "GroupMatrix") -> "GroupMatrix":
        if other.rows != self.rows:
            raise LengthMismatch(f"cannot merge {other.rows} group rows into {self.rows}")
        extra = [n for n in other.names if n != ALL_GROUP]
        for name in extra:
            if name in self.names:
                raise DuplicateGroupName(name)
        cols = [other.names.index(n) for n in extra]
        return GroupMatrix(
            np.hstack([self.membership, other.membership[:, cols]]), self.names + tuple(extra)
        )


@dataclass(frozen=True)
class ScoredDataset:
    scores: np.ndarray
    labels: np.ndarray
    groups: GroupMatrix

    def __post_init__(self):
        scores = _frozen(self.scores, np.float64)
        labels = _frozen(self.labels, np.int64)
        if scores.ndim != 1 or labels.ndim != 1:
            raise LengthMismatch("scores and labels must be vectors")
        if not (len(scores) == len(labels) == self.groups.rows):
            raise LengthMismatch(
                f"scores={len(scores)} labels={len(labels)} group rows={self.groups.rows}"
            )
        if len(scores) < 1:
            raise LengthMismatch("a dataset needs at least one row")
        bad = np.flatnonzero(~((scores >= 0.0) & (scores <= 1.0)))
        if bad.size:
            raise ScoreOutOfRange(int(bad[0]))
        bad = np.flatnonzero((labels != 0) & (labels != 1))
        if bad.size:
            raise NonBinaryLabel(int(bad[0]))
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.scores)

    def subset(self, rows: np.ndarray) -> "ScoredDataset":
        return ScoredDataset(self.scores[rows], self.labels[rows], self.groups.subset(rows))

    def with_scores(self, scores: npt.ArrayLike) -> "ScoredDataset":
        return ScoredDataset(np.asarray(scores, dtype=np.float64), self.labels, self.groups)

    def with_groups(self, groups: GroupMatrix) -> "ScoredDataset":
        return ScoredDataset(self.scores, self.labels, groups)


@dataclass(frozen=True)
class Grid:
    """The uniform grid {i/m : i = 0..m}."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"grid resolution must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))

    @classmethod
    def from_alpha(cls, alpha: float) -> "Grid":
        # 1/alpha can land a hair above an integer (1/0.1 is exact, 1/0.07 is not)
        return cls(max(1, math.ceil(1.0 / alpha - 1e-12)))

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def round(self, scores: npt.ArrayLike) -> np.ndarray:
        """Nearest grid point; exact halfway ties go to the lower point."""
        x = np.asarray(scores, dtype=np.float64) * self.m
        index = np.clip(np.ceil(x - 0.5), 0, self.m)
        return index / self.m

    def level_index(self, scores: npt.ArrayLike) -> np.ndarray:
        return np.rint(np.asarray(scores, dtype=np.float64) * self.m).astype(np.int64)

    def on_grid(self, scores: npt.ArrayLike) -> bool:
        scores = np.asarray(scores, dtype=np.float64)
        return bool(np.all(self.level_index(scores) / self.m == scores))

    def contains(self, level: float) -> bool:
        return bool(np.rint(level * self.m) / self.m == level)


@dataclass(frozen=True)
class BinDescriptor:
    level: float
    comparator: Comparator
    group_index: int

    def level_position(self, grid: Grid) -> int:
        return int(np.rint(self.level * grid.m))

    def mask(self, level_index: np.ndarray, membership: np.ndarray, grid: Grid) -> np.ndarray:
        k = self.level_position(grid)
        if self.comparator is Comparator.EQ:
            in_level = level_index == k
        elif self.comparator is Comparator.LE:
            in_level = level_index <= k
        else:
            in_level = level_index >= k
        return in_level & membership[:, self.group_index]


@dataclass(frozen=True)
class ConstantShift:
    delta: float

    kind = TransformKind.CONSTANT

    def apply(self, values: np.ndarray, clip: float = DEFAULT_CLIP) -> np.ndarray:
        return np.clip(values + self.delta, 0.0, 1.0)

    def params(self) -> Dict[str, float]:
        return {"delta": self.delta}


@dataclass(frozen=True)
class LogitLinear:
    alpha: float
    beta: float

    kind = TransformKind.LOGIT_LINEAR

    def apply(self, values: np.ndarray, clip: float = DEFAULT_CLIP) -> np.ndarray:
        return expit(self.alpha + self.beta * clipped_logit(values, clip))

    def params(self) -> Dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta}


Transform = Union[ConstantShift, LogitLinear]


@dataclass(frozen=True)
class Patch:
    bin: BinDescriptor
    transform: Transform


@dataclass(frozen=True)
class CalibratedModel:
    """A fitted calibrator: either an ordered patch sequence or a coefficient vector.

    ``group_names`` fixes the column order that ``BinDescriptor.group_index`` and
    the GCUR/GCULR coefficients refer to.
    """

    grid: Grid
    method: Method
    group_names: Tuple[str, ...]
    patches: Tuple[Patch, ...] = ()
    coefficients: Tuple[float, ...] = ()
    clip: float = DEFAULT_CLIP
    diagnostics: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "group_names", tuple(self.group_names))
        if self.method.parametric and self.patches:
            raise ValueError(f"{self.method.value} models carry coefficients, not patches")
        if not self.method.parametric and self.coefficients:
            raise ValueError(f"{self.method.value} models carry patches, not coefficients")
        for patch in self.patches:
            if not self.grid.contains(patch.bin.level):
                raise ValueError(f"patch level {patch.bin.level} is not on the grid")
            if not 0 <= patch.bin.group_index < len(self.group_names):
                raise ValueError(f"patch group index {patch.bin.group_index} out of range")


def validate_dataset(
    scores: Iterable[float],
    labels: Iterable[float],
    membership: Optional[npt.ArrayLike] = None,
    names: Optional[Sequence[str]] = None,
) -> ScoredDataset:
    """Check raw arrays and build a dataset.

    Every problem found is collected into ``violations`` on the raised error;
    the error class is that of the first violation.
    """
    scores = np.asarray(list(scores) if not isinstance(scores, np.ndarray) else scores, dtype=np.float64)
    labels = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels, dtype=np.float64)
    if membership is None:
        membership = np.ones((len(scores), 0), dtype=bool)
        names = []
    membership = np.asarray(membership)
    if membership.ndim == 1:
        membership = membership[:, None]
    names = list(names or [])

    if len(scores) != len(labels) or len(scores) != membership.shape[0]:
        raise LengthMismatch(
            f"scores={len(scores)} labels={len(labels)} group rows={membership.shape[0]}"
        )
    if len(scores) == 0:
        raise LengthMismatch("a dataset needs at least one row")

    violations: List[Violation] = []
    for i in np.flatnonzero(~(np.isfinite(scores) & (scores >= 0.0) & (scores <= 1.0))):
        violations.append(Violation(int(i), f"score {scores[i]!r} outside [0, 1]", ScoreOutOfRange))
    for i in np.flatnonzero((labels != 0) & (labels != 1)):
        violations.append(Violation(int(i), f"label {labels[i]!r} is not binary", NonBinaryLabel))
    seen = set()
    duplicates = []
    for name in names:
        if name in seen or not name:
            duplicates.append(name)
            violations.append(Violation(None, f"duplicate group name {name!r}", DuplicateGroupName))
        seen.add(name)
    if violations:
        first = violations[0]
        if first.kind is DuplicateGroupName:
            raise DuplicateGroupName(duplicates[0], violations)
        raise first.kind(first.index, violations)

    groups = GroupMatrix.from_columns(membership.astype(bool), names)
    return ScoredDataset(scores, labels.astype(np.int64), groups)


def split(dataset: ScoredDataset, fraction: float, seed: int) -> Tuple[ScoredDataset, ScoredDataset]:
    """Seeded disjoint row partition; the first part holds round(fraction * n) rows."""
    if not 0.0 < fraction < 1.0:
        raise DegenerateSplit(f"split fraction must lie in (0, 1), got {fraction}")
    n = dataset.n
    n_first = int(round(fraction * n))
    if n_first <= 0 or n_first >= n:
        raise DegenerateSplit(f"splitting {n} rows at {fraction} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    first = np.sort(order[:n_first])
    second = np.sort(order[n_first:])
    return dataset.subset(first), dataset.subset(second)
