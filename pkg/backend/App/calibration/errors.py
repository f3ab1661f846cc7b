from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence


class CalibrationError(Exception):
    """Base class for every failure the toolkit reports on purpose."""

    exit_code = 1


class ConfigError(CalibrationError):
    exit_code = 2


class DataError(CalibrationError):
    exit_code = 3


class NumericError(CalibrationError):
    exit_code = 4


@dataclass(frozen=True)
class Violation:
    index: Optional[int]
    reason: str
    kind: type


class DataValidationError(DataError):
    def __init__(self, message: str, violations: Sequence[Violation] = ()):
        super().__init__(message)
        self.violations = list(violations)


class LengthMismatch(DataValidationError):
    pass


class ScoreOutOfRange(DataValidationError):
    def __init__(self, index: int, violations: Sequence[Violation] = ()):
        super().__init__(f"score at row {index} is outside [0, 1]", violations)
        self.index = index


class NonBinaryLabel(DataValidationError):
    def __init__(self, index: int, violations: Sequence[Violation] = ()):
        super().__init__(f"label at row {index} is not 0 or 1", violations)
        self.index = index


class DuplicateGroupName(DataValidationError):
    def __init__(self, name: str, violations: Sequence[Violation] = ()):
        super().__init__(f"group name {name!r} appears more than once", violations)
        self.name = name


class NameCollision(DataValidationError):
    def __init__(self, name: str):
        super().__init__(f"group name {name!r} is reserved")
        self.name = name


class UnknownColumn(DataValidationError):
    def __init__(self, name: str):
        super().__init__(f"column {name!r} not found")
        self.name = name


class ParseError(DataValidationError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class GroupSchemaMismatch(DataValidationError):
    def __init__(self, missing: Sequence[str]):
        super().__init__(f"groups missing from input: {', '.join(missing)}")
        self.missing = list(missing)


class EmptyDataset(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class EmptyConditioningSet(DataError):
    pass


class EmptyGroup(DataError):
    pass


class AllGroupsEmpty(DataError):
    pass


class NoCandidateBins(DataError):
    pass


class TooFewSamples(DataError):
    pass


class TooFewChoices(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class EmptyAnswerSpan(DataError):
    pass


class UnreachableSignature(DataError):
    def __init__(self, signature: str):
        super().__init__(f"truth table has no entry for signature {signature}")
        self.signature = signature


class NoConvergence(NumericError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class RoundLimitExceeded(NumericError):
    pass


class RankDeficient(NumericError):
    def __init__(self, dropped: Sequence[str]):
        super().__init__(f"design matrix is rank deficient; dropped columns: {', '.join(dropped)}")
        self.dropped = list(dropped)


class InvariantViolation(NumericError):
    pass
