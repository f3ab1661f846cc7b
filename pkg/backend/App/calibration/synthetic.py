"""Synthetic binary-outcome data with known conditional probabilities.

The truth depends only on the group signature (the bit vector of user group
memberships), so population metrics are exact sums over a finite set of
(signature, noise level) cells.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator
from scipy.special import expit
from typing_extensions import Annotated

from App.calibration.data_model import DEFAULT_CLIP, Grid, GroupMatrix, ScoredDataset, clipped_logit
from App.calibration.errors import ConfigError, EmptyDataset, UnreachableSignature

logger = logging.getLogger(__name__)

RNG_NAME = "numpy.random.PCG64"


class BernoulliGroup(BaseModel):
    kind: Literal["bernoulli"] = "bernoulli"
    name: str
    rate: float = Field(ge=0.0, le=1.0)

    @property
    def columns(self) -> List[str]:
        return [self.name]


class PartitionGroup(BaseModel):
    kind: Literal["partition"] = "partition"
    names: List[str] = Field(min_length=1)
    probs: List[float]

    @model_validator(mode="after")
    def _check(self):
        if len(self.probs) != len(self.names):
            raise ValueError("partition needs one probability per category")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("partition probabilities must be nonnegative and sum to 1")
        return self

    @property
    def columns(self) -> List[str]:
        return list(self.names)


GroupRule = Annotated[Union[BernoulliGroup, PartitionGroup], Field(discriminator="kind")]


class LogisticTruth(BaseModel):
    """p* = expit(base + sum of effects of the groups a row belongs to)."""

    kind: Literal["logistic"] = "logistic"
    base: float = 0.0
    effects: Dict[str, float] = Field(default_factory=dict)


class TableTruth(BaseModel):
    """p* looked up by signature bit string, e.g. ``"0110"``."""

    kind: Literal["table"] = "table"
    table: Dict[str, float]

    @model_validator(mode="after")
    def _check(self):
        for signature, p in self.table.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {signature} outside [0, 1]")
        return self


Truth = Annotated[Union[LogisticTruth, TableTruth], Field(discriminator="kind")]


class Miscalibration(BaseModel):
    kind: Literal["identity", "logit_shift", "logit_scale", "fixed_noise"] = "identity"
    shifts: Dict[str, float] = Field(default_factory=dict)
    scale: float = 1.0
    sigma: float = Field(default=0.0, ge=0.0)
    noise_levels: int = Field(default=5, ge=1)

    def noise(self) -> np.ndarray:
        """Symmetric discrete offsets, equally likely."""
        if self.kind != "fixed_noise" or self.noise_levels == 1:
            return np.zeros(1)
        return self.sigma * np.linspace(-1.0, 1.0, self.noise_levels)


class SyntheticSpec(BaseModel):
    n: int = Field(ge=0)
    seed: int = 0
    groups: List[GroupRule] = Field(default_factory=list)
    truth: Truth = Field(default_factory=LogisticTruth)
    miscal: Miscalibration = Field(default_factory=Miscalibration)
    clip: float = DEFAULT_CLIP

    @model_validator(mode="after")
    def _names(self):
        names = self.group_names
        if len(set(names)) != len(names) or "ALL" in names:
            raise ValueError("group names must be unique and must not be 'ALL'")
        unknown = set(self.miscal.shifts) - set(names)
        if isinstance(self.truth, LogisticTruth):
            unknown |= set(self.truth.effects) - set(names)
        if unknown:
            raise ValueError(f"unknown group names: {sorted(unknown)}")
        return self

    @property
    def group_names(self) -> List[str]:
        return [c for rule in self.groups for c in rule.columns]


class TruthEntry(BaseModel):
    signature: str
    groups: List[str]
    weight: float
    p_true: float
    score: float


class TruthTable(BaseModel):
    rng: str = RNG_NAME
    seed: int
    n: int
    group_names: List[str]
    entries: List[TruthEntry]
    spec: SyntheticSpec


class PopulationMetrics(BaseModel):
    asce: float
    mse: float
    gasce: Dict[str, float]
    violation: Dict[str, float]
    bias: Dict[str, float]


def load_spec(path: Union[str, Path], seed: Optional[int] = None) -> SyntheticSpec:
    """Read a YAML synthetic spec; ``seed`` overrides the file's seed."""
    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read synthetic spec {path}: {e}") from e
    if seed is not None:
        raw["seed"] = seed
    try:
        return SyntheticSpec.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid synthetic spec {path}: {e}") from e


def _signature(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)


def _signatures(spec: SyntheticSpec) -> List[Tuple[np.ndarray, float]]:
    """Every signature with positive probability and its weight."""
    choices = []
    for rule in spec.groups:
        if isinstance(rule, BernoulliGroup):
            choices.append([(np.array([False]), 1.0 - rule.rate), (np.array([True]), rule.rate)])
        else:
            k = len(rule.names)
            choices.append([(np.arange(k) == i, p) for i, p in enumerate(rule.probs)])
    out = []
    for combo in itertools.product(*choices):
        weight = float(np.prod([w for _, w in combo])) if combo else 1.0
        if weight > 0.0:
            bits = np.concatenate([b for b, _ in combo]) if combo else np.zeros(0, dtype=bool)
            out.append((bits, weight))
    return out


def true_probability(spec: SyntheticSpec, bits: np.ndarray) -> float:
    if isinstance(spec.truth, TableTruth):
        key = _signature(bits)
        if key not in spec.truth.table:
            raise UnreachableSignature(key)
        return float(spec.truth.table[key])
    eta = spec.truth.base + sum(
        spec.truth.effects.get(name, 0.0) for name, bit in zip(spec.group_names, bits) if bit
    )
    return float(expit(eta))


def miscalibrated_score(spec: SyntheticSpec, p_true: float, bits: np.ndarray, noise: float = 0.0) -> float:
    miscal = spec.miscal
    if miscal.kind == "identity":
        score = p_true
    elif miscal.kind == "logit_shift":
        shift = sum(miscal.shifts.get(name, 0.0) for name, bit in zip(spec.group_names, bits) if bit)
        score = float(expit(clipped_logit(np.array(p_true), spec.clip) + shift))
    elif miscal.kind == "logit_scale":
        score = float(expit(miscal.scale * clipped_logit(np.array(p_true), spec.clip)))
    else:
        score = p_true + noise
    return float(np.clip(score, 0.0, 1.0))


def truth_table(spec: SyntheticSpec) -> TruthTable:
    entries = []
    for bits, weight in _signatures(spec):
        p_true = true_probability(spec, bits)
        entries.append(
            TruthEntry(
                signature=_signature(bits),
                groups=[name for name, bit in zip(spec.group_names, bits) if bit],
                weight=weight,
                p_true=p_true,
                score=miscalibrated_score(spec, p_true, bits),
            )
        )
    return TruthTable(seed=spec.seed, n=spec.n, group_names=spec.group_names, entries=entries, spec=spec)


@dataclass(frozen=True)
class SyntheticResult:
    dataset: ScoredDataset
    truth: TruthTable
    p_true: np.ndarray


def generate(spec: SyntheticSpec) -> SyntheticResult:
    """Draw n rows: memberships, then labels, then noise, all from one PCG64 stream."""
    if spec.n < 1:
        raise EmptyDataset("synthetic spec must ask for at least one row")
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    columns = []
    for rule in spec.groups:
        if isinstance(rule, BernoulliGroup):
            columns.append(rng.random(n) < rule.rate)
        else:
            category = rng.choice(len(rule.names), size=n, p=rule.probs)
            columns.extend(category == i for i in range(len(rule.names)))
    membership = np.column_stack(columns) if columns else np.zeros((n, 0), dtype=bool)

    table = truth_table(spec)
    lookup = {int(entry.signature or "0", 2): entry for entry in table.entries}
    bit_values = 1 << np.arange(membership.shape[1], dtype=np.int64)[::-1]
    codes = membership.astype(np.int64) @ bit_values if columns else np.zeros(n, dtype=np.int64)
    unique, inverse = np.unique(codes, return_inverse=True)
    cell_p, cell_score = np.empty(len(unique)), np.empty(len(unique))
    for j, code in enumerate(unique):
        entry = lookup.get(int(code))
        if entry is None:
            raise UnreachableSignature(format(int(code), f"0{membership.shape[1]}b"))
        cell_p[j], cell_score[j] = entry.p_true, entry.score
    p_true = cell_p[inverse.ravel()]
    scores = cell_score[inverse.ravel()]

    labels = (rng.random(n) < p_true).astype(np.int64)
    if spec.miscal.kind == "fixed_noise":
        offsets = spec.miscal.noise()[rng.integers(len(spec.miscal.noise()), size=n)]
        scores = np.clip(p_true + offsets, 0.0, 1.0)

    groups = GroupMatrix.from_columns(membership, spec.group_names)
    logger.info(f"Generated {n} synthetic rows over {len(spec.group_names)} groups (seed {spec.seed})")
    return SyntheticResult(ScoredDataset(scores, labels, groups), table, p_true)


def population_metrics(spec: SyntheticSpec, m: Optional[int] = None) -> PopulationMetrics:
    """Exact ASCE, per-group gASCE and MSE of the spec's score under its own distribution.

    With ``m`` the scores are rounded to the m-grid first.
    """
    grid = Grid(m) if m is not None else None
    noise = spec.miscal.noise()
    names = ["ALL"] + spec.group_names
    weights, p_true, scores, members = [], [], [], []
    for bits, weight in _signatures(spec):
        p = true_probability(spec, bits)
        for offset in noise:
            weights.append(weight / len(noise))
            p_true.append(p)
            scores.append(miscalibrated_score(spec, p, bits, offset))
            members.append(np.concatenate([[True], bits]))
    w = np.array(weights)
    p = np.array(p_true)
    s = np.array(scores)
    if grid is not None:
        s = grid.round(s)
    member = np.array(members, dtype=bool)

    levels, codes = np.unique(s, return_inverse=True)
    codes = codes.ravel()
    gasce, violation, bias = {}, {}, {}
    for g, name in enumerate(names):
        mask = member[:, g]
        total = w[mask].sum()
        if total <= 0:
            continue
        mass = np.bincount(codes[mask], weights=w[mask], minlength=len(levels))
        residual = np.bincount(codes[mask], weights=(w * (p - s))[mask], minlength=len(levels))
        nonempty = mass > 0
        gasce[name] = float(np.sum(residual[nonempty] ** 2 / mass[nonempty]) / total)
        violation[name] = float(total * gasce[name])
        bias[name] = float(np.sum(w[mask] * (p - s)[mask]) / total)
    mse = float(np.sum(w * (p * (1.0 - s) ** 2 + (1.0 - p) * s**2)))
    return PopulationMetrics(asce=gasce["ALL"], mse=mse, gasce=gasce, violation=violation, bias=bias)


def benchmark_spec(n: int = 50_000, seed: int = 0) -> SyntheticSpec:
    """Eight overlapping Bernoulli groups with logit shifts spread over [-1.5, 1.5]."""
    names = [f"g{i}" for i in range(8)]
    rates = np.linspace(0.15, 0.5, 8)
    effects = [0.9, -0.7, 0.6, -0.5, 0.4, -0.8, 0.7, -0.3]
    shifts = np.linspace(-1.5, 1.5, 8)
    return SyntheticSpec(
        n=n,
        seed=seed,
        groups=[BernoulliGroup(name=name, rate=float(r)) for name, r in zip(names, rates)],
        truth=LogisticTruth(base=0.2, effects=dict(zip(names, effects))),
        miscal=Miscalibration(kind="logit_shift", shifts={k: float(v) for k, v in zip(names, shifts)}),
    )
