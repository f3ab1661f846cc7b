"""Calibration and accuracy measures on empirical distributions.

Level sets are the grid points when a ``Grid`` is given and the distinct score
values when ``grid`` is None. Per-level sums are accumulated with ``bincount``
in row order, so results do not depend on how callers batch the work.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from App.calibration.data_model import (
    BinDescriptor,
    Comparator,
    Grid,
    GroupMatrix,
    ScoredDataset,
)
from App.calibration.errors import AllGroupsEmpty, EmptyConditioningSet, EmptyGroup

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LevelSets:
    """Row-to-level assignment of a score vector."""

    codes: np.ndarray
    levels: np.ndarray

    @classmethod
    def of(cls, scores: np.ndarray, grid: Optional[Grid] = None) -> "LevelSets":
        scores = np.asarray(scores, dtype=np.float64)
        if grid is None:
            levels, codes = np.unique(scores, return_inverse=True)
            return cls(codes.astype(np.int64).ravel(), levels)
        if not grid.on_grid(scores):
            logger.warning(f"Scores are off the m={grid.m} grid; rounding before computing metrics")
            scores = grid.round(scores)
        return cls(grid.level_index(scores), grid.levels)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def counts(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        codes = self.codes if mask is None else self.codes[mask]
        return np.bincount(codes, minlength=self.n_levels)

    def sums(self, values: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
        if mask is None:
            return np.bincount(self.codes, weights=values, minlength=self.n_levels)
        return np.bincount(self.codes[mask], weights=values[mask], minlength=self.n_levels)


def _mean_sq_bias(levels: LevelSets, residual: np.ndarray, mask: Optional[np.ndarray]) -> float:
    counts = levels.counts(mask)
    total = counts.sum()
    if total == 0:
        raise EmptyGroup("conditioning group has no rows")
    sums = levels.sums(residual, mask)
    nonempty = counts > 0
    return float(np.sum(sums[nonempty] ** 2 / counts[nonempty]) / total)


def residuals(dataset: ScoredDataset) -> np.ndarray:
    return dataset.labels - dataset.scores


def bias(dataset: ScoredDataset, mask: np.ndarray) -> float:
    """Mean of label - score over the selected rows."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyConditioningSet("mask selects no rows")
    return float(np.mean(residuals(dataset)[mask]))


def asce(dataset: ScoredDataset, grid: Optional[Grid] = None) -> float:
    levels = LevelSets.of(dataset.scores, grid)
    return _mean_sq_bias(levels, residuals(dataset), None)


def gasce(dataset: ScoredDataset, grid: Optional[Grid], group_index: int) -> float:
    mask = dataset.groups.membership[:, group_index]
    if not mask.any():
        raise EmptyGroup(f"group '{dataset.groups.names[group_index]}' has no rows")
    levels = LevelSets.of(dataset.scores, grid)
    if mask.all():
        return _mean_sq_bias(levels, residuals(dataset), None)
    return _mean_sq_bias(levels, residuals(dataset), mask)


def mse(dataset: ScoredDataset) -> float:
    return float(np.mean(residuals(dataset) ** 2))


def accuracy(dataset: ScoredDataset) -> float:
    predicted = (dataset.scores >= 0.5).astype(np.int64)
    return float(np.mean(predicted == dataset.labels))


def within_level_variance(dataset: ScoredDataset, grid: Optional[Grid] = None) -> float:
    """Sum over level sets of mass times the population variance of the labels."""
    levels = LevelSets.of(dataset.scores, grid)
    counts = levels.counts()
    y = dataset.labels.astype(np.float64)
    sums = levels.sums(y)
    nonempty = counts > 0
    means = sums[nonempty] / counts[nonempty]
    # labels are 0/1, so the in-level second moment equals the mean
    var = means - means**2
    return float(np.sum(counts[nonempty] * var) / dataset.n)


def ece(dataset: ScoredDataset, m: int) -> float:
    """Expected calibration error over m equal-width bins, last bin closed.

    Bin i is [i/m, (i+1)/m) with edges taken from `np.arange(m + 1) / m`, so a
    score sitting on a grid point lands in the bin it opens.
    """
    if m < 1:
        raise ValueError(f"ECE needs at least one bin, got {m}")
    f = dataset.scores
    edges = np.arange(m + 1) / m
    bins = np.clip(np.searchsorted(edges, f, side="right") - 1, 0, m - 1)
    confidence = np.maximum(f, 1.0 - f)
    correct = ((f >= 0.5).astype(np.int64) == dataset.labels).astype(np.float64)
    counts = np.bincount(bins, minlength=m)
    conf_sums = np.bincount(bins, weights=confidence, minlength=m)
    acc_sums = np.bincount(bins, weights=correct, minlength=m)
    nonempty = counts > 0
    gaps = np.abs(acc_sums[nonempty] - conf_sums[nonempty]) / counts[nonempty]
    return float(np.sum(counts[nonempty] * gaps) / dataset.n)


def group_violations(
    dataset: ScoredDataset, grid: Optional[Grid] = None, groups: Optional[GroupMatrix] = None
) -> np.ndarray:
    """mass(g) * gASCE(g) for every group column; NaN for empty groups."""
    groups = groups if groups is not None else dataset.groups
    levels = LevelSets.of(dataset.scores, grid)
    residual = residuals(dataset)
    counts = groups.counts
    out = np.full(groups.k, np.nan)
    for g in range(groups.k):
        if counts[g] == 0:
            continue
        mask = groups.membership[:, g]
        value = _mean_sq_bias(levels, residual, None if counts[g] == dataset.n else mask)
        out[g] = counts[g] / dataset.n * value
    return out


def multicalibration_violation(
    dataset: ScoredDataset, grid: Optional[Grid] = None, groups: Optional[GroupMatrix] = None
) -> Tuple[float, str]:
    """Largest mass-weighted gASCE over nonempty groups, lowest index on ties."""
    groups = groups if groups is not None else dataset.groups
    values = group_violations(dataset, grid, groups)
    best = -1
    for g, value in enumerate(values):
        if np.isnan(value):
            continue
        if best < 0 or value > values[best]:
            best = g
    if best < 0:
        raise AllGroupsEmpty("every group is empty")
    return float(values[best]), groups.names[best]


def group_bias(dataset: ScoredDataset) -> Dict[str, float]:
    """Residual mean per nonempty group."""
    residual = residuals(dataset)
    out = {}
    for g, name in enumerate(dataset.groups.names):
        mask = dataset.groups.membership[:, g]
        if mask.any():
            out[name] = float(np.mean(residual[mask]))
    return out


class BinStats(BaseModel):
    level: float
    comparator: Comparator
    group: str
    group_index: int
    count: int
    mass: float = Field(ge=0.0, le=1.0)
    mean_label: Optional[float] = None
    mean_score: Optional[float] = None
    bias: Optional[float] = None

    @property
    def empty(self) -> bool:
        return self.count == 0


class GroupReport(BaseModel):
    count: int
    mass: float
    mean_score: Optional[float] = None
    mean_label: Optional[float] = None
    gasce: Optional[float] = None
    violation: Optional[float] = None


class CalibrationReport(BaseModel):
    n: int
    m: Optional[int] = None
    asce: float
    mse: float
    ece: float
    accuracy: float
    max_violation: float
    worst_group: str
    per_group: Dict[str, GroupReport]
    per_bin: List[BinStats]


def bin_stats(dataset: ScoredDataset, grid: Grid, descriptor: BinDescriptor) -> BinStats:
    levels = LevelSets.of(dataset.scores, grid)
    mask = descriptor.mask(levels.codes, dataset.groups.membership, grid)
    count = int(mask.sum())
    stats = BinStats(
        level=descriptor.level,
        comparator=descriptor.comparator,
        group=dataset.groups.names[descriptor.group_index],
        group_index=descriptor.group_index,
        count=count,
        mass=count / dataset.n,
    )
    if count:
        stats.mean_label = float(np.mean(dataset.labels[mask]))
        stats.mean_score = float(np.mean(dataset.scores[mask]))
        stats.bias = float(np.mean(residuals(dataset)[mask]))
    return stats


def _level_bins(dataset: ScoredDataset, levels: LevelSets) -> List[BinStats]:
    residual = residuals(dataset)
    y = dataset.labels.astype(np.float64)
    out = []
    for g, name in enumerate(dataset.groups.names):
        mask = dataset.groups.membership[:, g]
        counts = levels.counts(mask)
        label_sums = levels.sums(y, mask)
        score_sums = levels.sums(dataset.scores, mask)
        bias_sums = levels.sums(residual, mask)
        for p in np.flatnonzero(counts):
            c = int(counts[p])
            out.append(
                BinStats(
                    level=float(levels.levels[p]),
                    comparator=Comparator.EQ,
                    group=name,
                    group_index=g,
                    count=c,
                    mass=c / dataset.n,
                    mean_label=float(label_sums[p] / c),
                    mean_score=float(score_sums[p] / c),
                    bias=float(bias_sums[p] / c),
                )
            )
    return out


def report(
    dataset: ScoredDataset,
    grid: Optional[Grid] = None,
    groups: Optional[GroupMatrix] = None,
    ece_bins: Optional[int] = None,
) -> CalibrationReport:
    """All metrics at once; ECE uses the grid's m bins unless ``ece_bins`` is given."""
    if groups is not None:
        dataset = dataset.with_groups(groups)
    if grid is not None and not grid.on_grid(dataset.scores):
        logger.warning(f"Scores are off the m={grid.m} grid; rounding before computing metrics")
        dataset = dataset.with_scores(grid.round(dataset.scores))
    levels = LevelSets.of(dataset.scores, grid)
    residual = residuals(dataset)

    per_group = {}
    violations = group_violations(dataset, grid)
    for g, name in enumerate(dataset.groups.names):
        mask = dataset.groups.membership[:, g]
        count = int(mask.sum())
        entry = GroupReport(count=count, mass=count / dataset.n)
        if count:
            entry.mean_score = float(np.mean(dataset.scores[mask]))
            entry.mean_label = float(np.mean(dataset.labels[mask]))
            entry.gasce = _mean_sq_bias(levels, residual, None if count == dataset.n else mask)
            entry.violation = float(violations[g])
        per_group[name] = entry
    worst, worst_group = multicalibration_violation(dataset, grid)

    if ece_bins is None:
        ece_bins = grid.m if grid is not None else 10
    return CalibrationReport(
        n=dataset.n,
        m=grid.m if grid is not None else None,
        asce=_mean_sq_bias(levels, residual, None),
        mse=mse(dataset),
        ece=ece(dataset, ece_bins),
        accuracy=accuracy(dataset),
        max_violation=worst,
        worst_group=worst_group,
        per_group=per_group,
        per_bin=_level_bins(dataset, levels),
    )
