"""Build group membership matrices from annotations, clusters or thresholds."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.preprocessing import StandardScaler

from App.calibration.data_model import ALL_GROUP, GroupMatrix
from App.calibration.errors import (
    ConfigError,
    DataValidationError,
    NameCollision,
    NonFiniteInput,
    TooFewSamples,
    UnknownColumn,
)

logger = logging.getLogger(__name__)

THRESHOLD_OPS = {"<": np.less, ">=": np.greater_equal, "≥": np.greater_equal}


@dataclass(frozen=True)
class FeatureTable:
    """Per-sample feature vectors, one row per dataset row."""

    frame: pd.DataFrame

    def __post_init__(self):
        frame = self.frame.copy()
        try:
            frame = frame.astype(np.float64)
        except (TypeError, ValueError) as e:
            raise DataValidationError(f"features must be numeric: {e}") from e
        if not np.all(np.isfinite(frame.to_numpy())):
            raise NonFiniteInput("feature table contains non-finite entries")
        object.__setattr__(self, "frame", frame)

    @classmethod
    def from_array(cls, values: npt.ArrayLike, columns: Optional[Sequence[str]] = None) -> "FeatureTable":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        columns = list(columns) if columns is not None else [f"x{i}" for i in range(values.shape[1])]
        return cls(pd.DataFrame(values, columns=columns))

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def columns(self) -> List[str]:
        return [str(c) for c in self.frame.columns]

    def values(self, columns: Optional[Sequence[str]] = None) -> np.ndarray:
        if columns is None:
            return self.frame.to_numpy()
        for col in columns:
            if col not in self.frame.columns:
                raise UnknownColumn(col)
        return self.frame[list(columns)].to_numpy()


@dataclass(frozen=True)
class ThresholdRule:
    column: str
    op: str
    cutoff: float
    name: str

    def __post_init__(self):
        if self.op not in THRESHOLD_OPS:
            raise ConfigError(f"threshold operator must be '<' or '>=', got {self.op!r}")


@dataclass(frozen=True)
class ClusteringResult:
    groups: GroupMatrix
    labels: np.ndarray
    inertia: float
    iterations: int
    empty_clusters: List[str]


@dataclass(frozen=True)
class AnnotationResult:
    groups: GroupMatrix
    empty_groups: List[str]


def _warn_empty(groups: GroupMatrix) -> List[str]:
    empty = groups.empty_groups
    for name in empty:
        logger.warning(f"Group '{name}' has no members")
    return empty


def groups_from_annotations(annotations: npt.ArrayLike, names: Sequence[str]) -> AnnotationResult:
    """Pass annotation bits through unchanged, with ALL prepended.

    Groups nobody is annotated with are kept as all-zero columns and listed in
    `empty_groups`.
    """
    matrix = np.asarray(annotations)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if not np.isin(matrix, (0, 1)).all():
        raise DataValidationError("annotation matrix must hold only 0/1 or boolean entries")
    names = [str(n) for n in names]
    if ALL_GROUP in names:
        raise NameCollision(ALL_GROUP)
    groups = GroupMatrix.from_columns(matrix.astype(bool), names)
    return AnnotationResult(groups, _warn_empty(groups))


def fit_clusters(
    features: FeatureTable,
    k: int,
    seed: int,
    standardize: bool = False,
    columns: Optional[Sequence[str]] = None,
    prefix: str = "cluster",
) -> ClusteringResult:
    """Hard k-means (Lloyd, k-means++ init) over the feature rows."""
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")
    x = features.values(columns)
    if len(x) < k:
        raise TooFewSamples(f"cannot form {k} clusters from {len(x)} rows")
    if standardize:
        x = StandardScaler().fit_transform(x)

    kmeans = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=100,
        tol=1e-6,
        random_state=seed,
        algorithm="lloyd",
    )
    with warnings.catch_warnings():
        # duplicate points can leave fewer distinct clusters than k; reported below
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = kmeans.fit_predict(x)

    names = [f"{prefix}_{i}" for i in range(k)]
    membership = labels[:, None] == np.arange(k)[None, :]
    groups = GroupMatrix.from_columns(membership, names)
    empty = _warn_empty(groups)
    logger.info(f"k-means: {k} clusters, inertia {kmeans.inertia_:.6g}, {kmeans.n_iter_} iterations")
    return ClusteringResult(groups, labels, float(kmeans.inertia_), int(kmeans.n_iter_), empty)


def cluster_groups(features: FeatureTable, k: int, seed: int, standardize: bool = False) -> GroupMatrix:
    return fit_clusters(features, k, seed, standardize).groups


def groups_from_thresholds(features: FeatureTable, rules: Sequence[ThresholdRule]) -> GroupMatrix:
    names = []
    columns = []
    for rule in rules:
        if rule.column not in features.columns:
            raise UnknownColumn(rule.column)
        if rule.name == ALL_GROUP:
            raise NameCollision(ALL_GROUP)
        values = features.frame[rule.column].to_numpy()
        columns.append(THRESHOLD_OPS[rule.op](values, rule.cutoff))
        names.append(rule.name)
    membership = np.column_stack(columns) if columns else np.ones((features.n, 0), dtype=bool)
    groups = GroupMatrix.from_columns(membership, names)
    _warn_empty(groups)
    return groups
