"""Initial confidence scores computed from caller-provided logits."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Hashable, Mapping, Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logsumexp

from App.calibration.errors import EmptyAnswerSpan, NonFiniteInput, TooFewChoices, UnknownColumn

logger = logging.getLogger(__name__)


def _finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput(f"{what} must be finite")
    return values


@dataclass(frozen=True)
class TokenLogits:
    """Unnormalized logits with a map from token identifiers to positions."""

    values: np.ndarray
    index: Mapping[Hashable, int]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        _finite(values, "token logits")
        for token, position in self.index.items():
            if not 0 <= position < len(values):
                raise UnknownColumn(str(token))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "index", dict(self.index))

    @classmethod
    def from_mapping(cls, logits: Mapping[Hashable, float]) -> "TokenLogits":
        tokens = list(logits)
        return cls(np.array([logits[t] for t in tokens]), {t: i for i, t in enumerate(tokens)})

    def __getitem__(self, token: Hashable) -> float:
        try:
            return float(self.values[self.index[token]])
        except KeyError:
            raise UnknownColumn(str(token)) from None


@dataclass(frozen=True)
class SequenceLogProbs:
    """Per-token log-probabilities of prompt + answer; positions prompt_len.. are the answer."""

    logprobs: np.ndarray
    prompt_len: int

    def __post_init__(self):
        logprobs = np.asarray(self.logprobs, dtype=np.float64)
        if logprobs.ndim != 1:
            raise NonFiniteInput("log-probabilities must be a vector")
        _finite(logprobs, "log-probabilities")
        if np.any(logprobs > 0.0):
            raise NonFiniteInput("log-probabilities must be <= 0")
        if self.prompt_len < 0:
            raise EmptyAnswerSpan(f"prompt length {self.prompt_len} is negative")
        logprobs.setflags(write=False)
        object.__setattr__(self, "logprobs", logprobs)

    @property
    def total_len(self) -> int:
        return len(self.logprobs)

    @property
    def answer(self) -> np.ndarray:
        return self.logprobs[self.prompt_len:]


def true_false_score(logit_true: float, logit_false: float) -> float:
    """s_True / (s_True + s_False), evaluated as expit of the logit gap."""
    _finite(np.array([logit_true, logit_false], dtype=np.float64), "logits")
    return float(expit(logit_true - logit_false))


def inverse_perplexity_score(seq: SequenceLogProbs) -> float:
    if seq.total_len <= seq.prompt_len:
        raise EmptyAnswerSpan(
            f"answer span is empty (prompt_len={seq.prompt_len}, total_len={seq.total_len})"
        )
    return float(np.exp(np.mean(seq.answer)))


def multiple_choice_score(answer_logits: npt.ArrayLike) -> float:
    """Largest softmax component over the answer choices; never below 1/K."""
    logits = np.asarray(answer_logits, dtype=np.float64).ravel()
    if len(logits) < 2:
        raise TooFewChoices(f"need at least 2 choices, got {len(logits)}")
    _finite(logits, "choice logits")
    k = len(logits)
    score = float(np.exp(np.max(logits) - logsumexp(logits)))
    return max(score, 1.0 / k)


def token_pair_score(logits: TokenLogits, true_token: Hashable, false_token: Hashable) -> float:
    return true_false_score(logits[true_token], logits[false_token])


def choice_score(logits: TokenLogits, choice_tokens: Sequence[Hashable]) -> float:
    return multiple_choice_score([logits[t] for t in choice_tokens])


def score_batch(kind: str, rows: Sequence) -> np.ndarray:
    """Score many rows of one input kind; ``rows`` holds the per-formula arguments."""
    if kind == "true_false":
        out = [true_false_score(lt, lf) for lt, lf in rows]
    elif kind == "multiple_choice":
        out = [multiple_choice_score(r) for r in rows]
    elif kind == "inverse_perplexity":
        out = [inverse_perplexity_score(r) for r in rows]
    else:
        raise ValueError(f"unknown score kind {kind!r}")
    logger.debug(f"Scored {len(out)} rows as {kind}")
    return np.asarray(out, dtype=np.float64)


SCORE_KINDS: Dict[str, str] = {
    "true_false": "logit_true,logit_false",
    "multiple_choice": "choice_1,...,choice_K",
    "inverse_perplexity": "prompt_len,logprobs",
}
