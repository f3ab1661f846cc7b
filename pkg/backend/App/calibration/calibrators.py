"""Fitting algorithms and the prediction engine.

Patch-sequence models (HB, IGHB, IGLB) store every correction they applied and
``predict`` replays them through the same helper used during training, so a
model applied to its own calibration rows reproduces the training values
bit for bit. Parametric models (LS, GCUR, GCULR) store coefficients.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy.special import expit

from App.calibration import metrics
from App.calibration.data_model import (
    ALL_GROUP,
    BinDescriptor,
    CalibratedModel,
    Comparator,
    ConstantShift,
    Grid,
    GroupMatrix,
    LogitLinear,
    Method,
    Patch,
    ScoredDataset,
    Transform,
    TransformKind,
    clipped_logit,
    split,
)
from App.calibration.errors import (
    ConfigError,
    EmptyDataset,
    InvariantViolation,
    NoCandidateBins,
    RoundLimitExceeded,
)
from App.calibration.regression import fit_group_logistic, fit_group_shifts, fit_linear_scaling

logger = logging.getLogger(__name__)

MSE_TOLERANCE = 1e-10


def round_to_grid(scores: npt.ArrayLike, m: int) -> np.ndarray:
    return Grid(m).round(scores)


class FitConfig(BaseModel):
    alpha: float = Field(gt=0.0, lt=1.0)
    epsilon: float = Field(default=0.01, ge=0.0)
    max_rounds: Optional[int] = Field(default=None, ge=1)
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = 0
    comparators: Optional[List[Comparator]] = None
    transform: Optional[TransformKind] = None
    clip: float = Field(default=1e-6, gt=0.0, lt=0.5)
    min_patch_rows: int = Field(default=8, ge=1)

    @field_validator("comparators")
    @classmethod
    def _distinct(cls, value):
        if value is not None:
            if not value:
                raise ValueError("comparators must not be empty")
            value = sorted(set(value), key=lambda c: c.order)
        return value

    @property
    def grid(self) -> Grid:
        return Grid.from_alpha(self.alpha)

    @property
    def round_cap(self) -> int:
        if self.max_rounds is not None:
            return self.max_rounds
        return math.ceil(4.0 / self.alpha**2)

    def with_defaults(self, comparators: Sequence[Comparator], transform: TransformKind) -> "FitConfig":
        return self.model_copy(
            update={
                "comparators": self.comparators or list(comparators),
                "transform": self.transform or transform,
            }
        )


def make_config(**kwargs) -> FitConfig:
    """FitConfig from loose keyword arguments; invalid values raise ConfigError."""
    try:
        return FitConfig(**{k: v for k, v in kwargs.items() if v is not None})
    except ValidationError as e:
        raise ConfigError(f"invalid fit configuration: {e}") from e


class FitRecord(BaseModel):
    round: int
    level: float
    comparator: Comparator
    group: str
    group_index: int
    count: int
    mass: float
    bias: float
    transform: TransformKind
    params: Dict[str, float]
    violation: Optional[float] = None
    mse_before: float
    mse_patched: float
    mse: float
    val_mse: Optional[float] = None


class FitTrace(BaseModel):
    method: str
    stop_reason: str
    rounds: int = 0
    initial_mse: Optional[float] = None
    initial_val_mse: Optional[float] = None
    records: List[FitRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def _count(self):
        self.rounds = len(self.records)
        return self


@dataclass(frozen=True)
class WorstBin:
    bin: BinDescriptor
    bias: float
    mass: float
    count: int
    objective: float


def select_worst_bin(
    dataset: ScoredDataset,
    grid: Grid,
    groups: Optional[GroupMatrix] = None,
    comparators: Sequence[Comparator] = (Comparator.EQ,),
    warn_empty: bool = True,
) -> WorstBin:
    """Exhaustive scan of mass * bias^2 over (level, group, comparator).

    Ties go to the larger mass, then the lower level, the lower group index and
    finally EQ < LE < GE.
    """
    groups = groups if groups is not None else dataset.groups
    levels = metrics.LevelSets.of(dataset.scores, grid)
    residual = metrics.residuals(dataset)
    n = dataset.n
    positions = np.arange(grid.m + 1)

    candidates = []
    for g in range(groups.k):
        mask = groups.membership[:, g]
        if not mask.any():
            if warn_empty:
                logger.warning(f"Group '{groups.names[g]}' is empty; excluded from bin selection")
            continue
        counts = levels.counts(mask).astype(np.float64)
        sums = levels.sums(residual, mask)
        prefix_counts, prefix_sums = np.cumsum(counts), np.cumsum(sums)
        # GE at p is the total minus the LE prefix below p; GE at 0 and LE at m share bits
        below_counts = np.concatenate(([0.0], prefix_counts[:-1]))
        below_sums = np.concatenate(([0.0], prefix_sums[:-1]))
        for comparator in sorted(set(comparators), key=lambda c: c.order):
            if comparator is Comparator.EQ:
                c, s = counts, sums
            elif comparator is Comparator.LE:
                c, s = prefix_counts, prefix_sums
            else:
                c, s = prefix_counts[-1] - below_counts, prefix_sums[-1] - below_sums
            nonempty = c > 0
            objective = np.zeros_like(s)
            objective[nonempty] = s[nonempty] ** 2 / (c[nonempty] * n)
            for p in positions[nonempty]:
                candidates.append((objective[p], c[p], p, g, comparator.order, s[p]))
    if not candidates:
        raise NoCandidateBins("no nonempty (level, group) bin to patch")

    table = np.array(candidates)
    # lexsort uses the last key as primary
    order = np.lexsort((table[:, 4], table[:, 3], table[:, 2], -table[:, 1], -table[:, 0]))
    objective, count, p, g, cmp_order, residual_sum = table[order[0]]
    comparator = [c for c in Comparator if c.order == int(cmp_order)][0]
    descriptor = BinDescriptor(level=float(int(p) / grid.m), comparator=comparator, group_index=int(g))
    return WorstBin(descriptor, float(residual_sum / count), float(count / n), int(count), float(objective))


def _patch_mask(values: np.ndarray, membership: np.ndarray, grid: Grid, descriptor: BinDescriptor) -> np.ndarray:
    return descriptor.mask(grid.level_index(values), membership, grid)


def _apply_patch(values: np.ndarray, membership: np.ndarray, grid: Grid, patch: Patch, clip: float) -> np.ndarray:
    """Patch the rows currently in the bin; the result is not re-rounded."""
    mask = _patch_mask(values, membership, grid, patch.bin)
    out = values.copy()
    out[mask] = np.clip(patch.transform.apply(values[mask], clip), 0.0, 1.0)
    return out


def replay(values: np.ndarray, membership: np.ndarray, grid: Grid, patches: Sequence[Patch], clip: float) -> np.ndarray:
    """Sequential composition: patch, then re-round, for every patch in order."""
    values = grid.round(values)
    for patch in patches:
        values = grid.round(_apply_patch(values, membership, grid, patch, clip))
    return values


def _replay_histogram(values: np.ndarray, grid: Grid, patches: Sequence[Patch]) -> np.ndarray:
    """Simultaneous level-set shifts evaluated on the rounded input, not re-rounded."""
    rounded = grid.round(values)
    codes = grid.level_index(rounded)
    out = rounded.copy()
    for patch in patches:
        mask = codes == patch.bin.level_position(grid)
        out[mask] = rounded[mask] + patch.transform.delta
    if out.min() < 0.0 or out.max() > 1.0:
        out = np.clip(out, 0.0, 1.0)
    return out


def _fit_transform(
    kind: TransformKind, values: np.ndarray, labels: np.ndarray, bias: float, config: FitConfig
) -> Transform:
    """Patch for one selected bin.

    On an EQ bin every score is the same, so the logit-linear fit only matches the
    bin's label mean and ighb_ls ends up with the same outputs as ighb.
    """
    if kind is TransformKind.CONSTANT:
        return ConstantShift(float(bias))
    if len(values) < config.min_patch_rows or np.all(labels == labels[0]):
        return ConstantShift(float(bias))
    fit = fit_linear_scaling(values, labels, config.clip)
    return LogitLinear(fit.alpha, fit.beta)


def fit_hb(calib: ScoredDataset, m: int) -> CalibratedModel:
    """Histogram binning: shift every nonempty level set by its bias."""
    if calib.n < 1:
        raise EmptyDataset("histogram binning needs at least one row")
    grid = Grid(m)
    rounded = grid.round(calib.scores)
    levels = metrics.LevelSets.of(rounded, grid)
    counts = levels.counts()
    residual_sums = levels.sums(calib.labels - rounded)
    patches = []
    for p in np.flatnonzero(counts):
        delta = float(residual_sums[p] / counts[p])
        patches.append(Patch(BinDescriptor(float(p / grid.m), Comparator.EQ, 0), ConstantShift(delta)))
    logger.info(f"HB: {len(patches)} level-set patches on m={m}")
    return CalibratedModel(grid=grid, method=Method.HB, group_names=(ALL_GROUP,), patches=tuple(patches))


def fit_ls(calib: ScoredDataset, config: Optional[FitConfig] = None) -> CalibratedModel:
    config = config or FitConfig(alpha=0.1)
    if calib.n < 2:
        raise EmptyDataset("linear scaling needs at least two rows")
    fit = fit_linear_scaling(calib.scores, calib.labels, config.clip)
    logger.info(f"LS: alpha={fit.alpha:.6g}, beta={fit.beta:.6g}, mse={fit.mse:.6g}")
    return CalibratedModel(
        grid=config.grid,
        method=Method.LS,
        group_names=(ALL_GROUP,),
        coefficients=(fit.alpha, fit.beta),
        clip=config.clip,
        diagnostics={
            "converged": fit.converged,
            "iterations": fit.iterations,
            "grad_norm": fit.grad_norm,
            "mse": fit.mse,
        },
    )


def _nonempty_columns(groups: GroupMatrix) -> Tuple[List[int], List[str]]:
    """Column order for design matrices: user groups first, ALL last; empty groups skipped."""
    empty = groups.empty_groups
    for name in empty:
        logger.warning(f"Group '{name}' is empty in the calibration data; coefficient fixed at 0")
    order = [j for j, name in enumerate(groups.names) if name != ALL_GROUP and name not in empty]
    order.append(groups.index(ALL_GROUP))
    return order, empty


def fit_gcur(
    calib: ScoredDataset, groups: Optional[GroupMatrix] = None, config: Optional[FitConfig] = None
) -> CalibratedModel:
    """Group-conditional unbiased regression: f + sum_g lambda_g g by least squares."""
    config = config or FitConfig(alpha=0.1)
    groups = groups if groups is not None else calib.groups
    order, empty = _nonempty_columns(groups)
    fit = fit_group_shifts(calib.scores, calib.labels, groups.membership, groups.names, order)
    raw = calib.scores + groups.membership @ fit.coefficients
    clip_rate = float(np.mean((raw < 0.0) | (raw > 1.0)))
    if clip_rate > 0:
        logger.info(f"GCUR: {clip_rate:.2%} of calibration predictions fall outside [0, 1]")
    return CalibratedModel(
        grid=config.grid,
        method=Method.GCUR,
        group_names=groups.names,
        coefficients=tuple(fit.coefficients),
        clip=config.clip,
        diagnostics={
            "clip_rate": clip_rate,
            "dropped": [groups.names[j] for j in fit.dropped],
            "empty": empty,
        },
    )


def fit_gculr(
    calib: ScoredDataset, groups: Optional[GroupMatrix] = None, config: Optional[FitConfig] = None
) -> CalibratedModel:
    """Logistic group-conditional regression: expit(theta_0 logit f + sum_g theta_g g)."""
    config = config or FitConfig(alpha=0.1)
    groups = groups if groups is not None else calib.groups
    order, empty = _nonempty_columns(groups)
    fit = fit_group_logistic(
        calib.scores, calib.labels, groups.membership, groups.names, order, config.clip
    )
    logger.info(f"GCULR: converged in {fit.iterations} Newton iterations (|grad|={fit.grad_norm:.3g})")
    return CalibratedModel(
        grid=config.grid,
        method=Method.GCULR,
        group_names=groups.names,
        coefficients=tuple(fit.coefficients),
        clip=config.clip,
        diagnostics={
            "iterations": fit.iterations,
            "grad_norm": fit.grad_norm,
            "ridge": fit.ridge,
            "regularized": fit.ridge > 0,
            "dropped": [groups.names[j] for j in fit.dropped],
            "empty": empty,
        },
    )


def _mse(values: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean((labels - values) ** 2))


def _record(
    round_: int, worst: WorstBin, transform: Transform, groups: GroupMatrix, **mses
) -> FitRecord:
    return FitRecord(
        round=round_,
        level=worst.bin.level,
        comparator=worst.bin.comparator,
        group=groups.names[worst.bin.group_index],
        group_index=worst.bin.group_index,
        count=worst.count,
        mass=worst.mass,
        bias=worst.bias,
        transform=transform.kind,
        params=transform.params(),
        **mses,
    )


def fit_ighb(
    calib: ScoredDataset,
    groups: Optional[GroupMatrix] = None,
    config: Optional[FitConfig] = None,
    name: str = "ighb",
) -> Tuple[CalibratedModel, FitTrace]:
    """Iterative grouped histogram binning.

    Patches the worst (level, group) bin until the multicalibration violation
    is at most alpha. With EQ bins and constant shifts every round must weakly
    lower the in-sample MSE and the loop must end within ceil(4 / alpha^2)
    rounds; other comparator/transform combinations stop at the round cap or
    when a round changes nothing.
    """
    config = (config or FitConfig(alpha=0.1)).with_defaults([Comparator.EQ], TransformKind.CONSTANT)
    groups = groups if groups is not None else calib.groups
    data = calib.with_groups(groups)
    grid = config.grid
    classic = config.comparators == [Comparator.EQ] and config.transform is TransformKind.CONSTANT
    for empty in groups.empty_groups:
        logger.warning(f"Group '{empty}' is empty; excluded from bin selection")

    values = grid.round(data.scores)
    labels = data.labels
    patches: List[Patch] = []
    records: List[FitRecord] = []
    initial_mse = _mse(values, labels)
    stop_reason = "converged"
    while True:
        current = data.with_scores(values)
        violation, worst_group = metrics.multicalibration_violation(current, grid)
        if violation <= config.alpha:
            break
        if len(patches) >= config.round_cap:
            if classic:
                raise RoundLimitExceeded(
                    f"violation {violation:.6g} > alpha={config.alpha} after {len(patches)} rounds"
                )
            stop_reason = "round_limit"
            logger.warning(f"{name}: stopped at the round cap {config.round_cap} with violation {violation:.6g}")
            break

        worst = select_worst_bin(current, grid, comparators=config.comparators, warn_empty=False)
        mask = _patch_mask(values, groups.membership, grid, worst.bin)
        transform = _fit_transform(config.transform, values[mask], labels[mask], worst.bias, config)
        patch = Patch(worst.bin, transform)
        patched = _apply_patch(values, groups.membership, grid, patch, config.clip)
        rounded = grid.round(patched)

        mse_before = _mse(values, labels)
        mse_after = _mse(rounded, labels)
        if classic and mse_after > mse_before + MSE_TOLERANCE:
            raise InvariantViolation(
                f"round {len(patches) + 1}: MSE rose from {mse_before:.12g} to {mse_after:.12g}"
            )
        if not classic and np.array_equal(rounded, values):
            stop_reason = "stalled"
            logger.warning(f"{name}: round {len(patches) + 1} changed no score; stopping")
            break

        records.append(
            _record(
                len(patches) + 1,
                worst,
                transform,
                groups,
                violation=violation,
                mse_before=mse_before,
                mse_patched=_mse(patched, labels),
                mse=mse_after,
            )
        )
        logger.debug(
            f"{name} round {len(patches) + 1}: bin ({worst.bin.level:.4g}, {worst.bin.comparator.value}, "
            f"{groups.names[worst.bin.group_index]}), mass {worst.mass:.4g}, bias {worst.bias:.4g}, "
            f"mse {mse_after:.6g}, worst group {worst_group}"
        )
        patches.append(patch)
        values = rounded

    logger.info(f"{name}: {len(patches)} rounds, stop reason '{stop_reason}'")
    final_violation, _ = metrics.multicalibration_violation(data.with_scores(values), grid)
    model = CalibratedModel(
        grid=grid,
        method=Method.IGHB,
        group_names=groups.names,
        patches=tuple(patches),
        clip=config.clip,
        diagnostics={
            "variant": name,
            "rounds": len(patches),
            "stop_reason": stop_reason,
            "violation": final_violation,
        },
    )
    trace = FitTrace(method=name, stop_reason=stop_reason, initial_mse=initial_mse, records=records)
    return model, trace


def fit_iglb(
    data: ScoredDataset,
    groups: Optional[GroupMatrix] = None,
    config: Optional[FitConfig] = None,
    name: str = "iglb",
) -> Tuple[CalibratedModel, FitTrace]:
    """Iterative grouped linear binning with upper/lower-set bins and early stopping.

    The data is split into a calibration and a validation part. Each round fits
    a logit-linear patch on the worst calibration bin; the loop ends when that
    bin's calibration mass is at most epsilon or when the patch would not lower
    the validation MSE.
    """
    config = (config or FitConfig(alpha=0.1)).with_defaults(
        [Comparator.LE, Comparator.GE], TransformKind.LOGIT_LINEAR
    )
    if any(c is Comparator.EQ for c in config.comparators):
        raise ConfigError("IGLB searches upper/lower-set bins only (LE, GE)")
    if config.epsilon <= 0.0:
        raise ConfigError(f"IGLB needs epsilon > 0, got {config.epsilon}")
    groups = groups if groups is not None else data.groups
    calib, val = split(data.with_groups(groups), 1.0 - config.val_fraction, config.seed)
    grid = config.grid
    for empty in calib.groups.empty_groups:
        logger.warning(f"Group '{empty}' is empty in the calibration split; excluded from bin selection")

    values = grid.round(calib.scores)
    val_values = grid.round(val.scores)
    val_mse = _mse(val_values, val.labels)
    initial_mse, initial_val_mse = _mse(values, calib.labels), val_mse
    patches: List[Patch] = []
    records: List[FitRecord] = []
    stop_reason = "round_limit"
    while len(patches) < config.round_cap:
        current = calib.with_scores(values)
        worst = select_worst_bin(current, grid, comparators=config.comparators, warn_empty=False)
        if worst.mass <= config.epsilon:
            stop_reason = "min_mass"
            break
        mask = _patch_mask(values, calib.groups.membership, grid, worst.bin)
        transform = _fit_transform(config.transform, values[mask], calib.labels[mask], worst.bias, config)
        patch = Patch(worst.bin, transform)

        val_candidate = grid.round(_apply_patch(val_values, val.groups.membership, grid, patch, config.clip))
        candidate_val_mse = _mse(val_candidate, val.labels)
        if candidate_val_mse >= val_mse:
            stop_reason = "validation"
            break
        patched = _apply_patch(values, calib.groups.membership, grid, patch, config.clip)
        rounded = grid.round(patched)
        if np.array_equal(rounded, values):
            stop_reason = "stalled"
            logger.warning(f"{name}: round {len(patches) + 1} changed no calibration score; stopping")
            break

        records.append(
            _record(
                len(patches) + 1,
                worst,
                transform,
                calib.groups,
                mse_before=_mse(values, calib.labels),
                mse_patched=_mse(patched, calib.labels),
                mse=_mse(rounded, calib.labels),
                val_mse=candidate_val_mse,
            )
        )
        logger.debug(
            f"{name} round {len(patches) + 1}: bin ({worst.bin.level:.4g}, {worst.bin.comparator.value}, "
            f"{calib.groups.names[worst.bin.group_index]}), mass {worst.mass:.4g}, val mse {candidate_val_mse:.6g}"
        )
        patches.append(patch)
        values, val_values, val_mse = rounded, val_candidate, candidate_val_mse

    if stop_reason == "round_limit":
        logger.warning(f"{name}: stopped at the round cap {config.round_cap}")
    logger.info(f"{name}: {len(patches)} rounds, stop reason '{stop_reason}'")
    model = CalibratedModel(
        grid=grid,
        method=Method.IGLB,
        group_names=groups.names,
        patches=tuple(patches),
        clip=config.clip,
        diagnostics={
            "variant": name,
            "rounds": len(patches),
            "stop_reason": stop_reason,
            "calib_rows": calib.n,
            "val_rows": val.n,
        },
    )
    trace = FitTrace(
        method=name,
        stop_reason=stop_reason,
        initial_mse=initial_mse,
        initial_val_mse=initial_val_mse,
        records=records,
    )
    return model, trace


def predict(
    model: CalibratedModel,
    scores: npt.ArrayLike,
    groups: Optional[GroupMatrix] = None,
    clip: bool = True,
) -> np.ndarray:
    """Apply a fitted model to raw scores; group columns are matched by name."""
    scores = np.asarray(scores, dtype=np.float64)
    if groups is None:
        groups = GroupMatrix.marginal(len(scores))
    membership = groups.select(model.group_names).membership

    if model.method is Method.HB:
        return _replay_histogram(scores, model.grid, model.patches)
    if not model.method.parametric:
        return replay(scores, membership, model.grid, model.patches, model.clip)

    theta = np.asarray(model.coefficients)
    if model.method is Method.LS:
        out = expit(theta[0] + theta[1] * clipped_logit(scores, model.clip))
    elif model.method is Method.GCUR:
        out = scores + membership @ theta
    else:
        out = expit(theta[0] * clipped_logit(scores, model.clip) + membership @ theta[1:])
    return np.clip(out, 0.0, 1.0) if clip else out


def predict_dataset(model: CalibratedModel, dataset: ScoredDataset) -> ScoredDataset:
    return dataset.with_scores(predict(model, dataset.scores, dataset.groups))


@dataclass(frozen=True)
class MethodSpec:
    method: Method
    comparators: Optional[Tuple[Comparator, ...]] = None
    transform: Optional[TransformKind] = None


METHODS: Dict[str, MethodSpec] = {
    "hb": MethodSpec(Method.HB),
    "ls": MethodSpec(Method.LS),
    "gcur": MethodSpec(Method.GCUR),
    "gculr": MethodSpec(Method.GCULR),
    "ighb": MethodSpec(Method.IGHB, (Comparator.EQ,), TransformKind.CONSTANT),
    "ighb_tau": MethodSpec(Method.IGHB, (Comparator.LE, Comparator.GE), TransformKind.CONSTANT),
    "ighb_ls": MethodSpec(Method.IGHB, (Comparator.EQ,), TransformKind.LOGIT_LINEAR),
    "iglb": MethodSpec(Method.IGLB, (Comparator.LE, Comparator.GE), TransformKind.LOGIT_LINEAR),
}


def fit_method(
    name: str, dataset: ScoredDataset, config: FitConfig, groups: Optional[GroupMatrix] = None
) -> Tuple[CalibratedModel, Optional[FitTrace]]:
    """Fit any method by its command-line name, variants included."""
    try:
        spec = METHODS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}") from None
    groups = groups if groups is not None else dataset.groups
    if spec.method is Method.HB:
        return fit_hb(dataset, config.grid.m), None
    if spec.method is Method.LS:
        return fit_ls(dataset, config), None
    if spec.method is Method.GCUR:
        return fit_gcur(dataset, groups, config), None
    if spec.method is Method.GCULR:
        return fit_gculr(dataset, groups, config), None

    overrides: Dict[str, Any] = {}
    if spec.comparators is not None and config.comparators is None:
        overrides["comparators"] = list(spec.comparators)
    if spec.transform is not None and config.transform is None:
        overrides["transform"] = spec.transform
    config = config.model_copy(update=overrides)
    if spec.method is Method.IGHB:
        return fit_ighb(dataset, groups, config, name=name.lower())
    return fit_iglb(dataset, groups, config, name=name.lower())
