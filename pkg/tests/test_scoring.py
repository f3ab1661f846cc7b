import math

import numpy as np
import pytest
from scipy.special import expit, softmax

from App.calibration.errors import EmptyAnswerSpan, NonFiniteInput, TooFewChoices, UnknownColumn
from App.calibration.scoring import (
    SequenceLogProbs,
    TokenLogits,
    choice_score,
    inverse_perplexity_score,
    multiple_choice_score,
    score_batch,
    token_pair_score,
    true_false_score,
)


class TestTrueFalse:
    def test_equal_logits(self):
        assert true_false_score(0.0, 0.0) == 0.5

    def test_odds_of_three(self):
        assert true_false_score(math.log(3.0), 0.0) == pytest.approx(0.75, abs=1e-15)

    def test_large_gap_does_not_overflow(self):
        score = true_false_score(1000.0, 0.0)

        assert 0.999 < score <= 1.0

    def test_non_finite(self):
        with pytest.raises(NonFiniteInput):
            true_false_score(float("nan"), 0.0)

    def test_shift_invariance_and_complement(self, rng):
        a, b = rng.normal(0, 5, size=(2, 10_000))
        c = rng.uniform(-50, 50, size=10_000)

        for x, y, shift in zip(a, b, c):
            base = true_false_score(x, y)
            assert abs(true_false_score(x + shift, y + shift) - base) <= 1e-12
            assert abs(base + true_false_score(y, x) - 1.0) <= 1e-15


class TestInversePerplexity:
    def test_constant_answer(self):
        seq = SequenceLogProbs(np.log([0.9, 0.2, 0.5, 0.5, 0.5, 0.5]), prompt_len=2)

        assert inverse_perplexity_score(seq) == pytest.approx(0.5, abs=1e-15)

    def test_geometric_mean(self):
        seq = SequenceLogProbs(np.log([0.9, 0.4]), prompt_len=0)

        assert inverse_perplexity_score(seq) == pytest.approx(0.6, abs=1e-12)

    def test_certain_answer(self):
        seq = SequenceLogProbs(np.zeros(5), prompt_len=3)

        assert inverse_perplexity_score(seq) == 1.0

    def test_empty_answer_span(self):
        with pytest.raises(EmptyAnswerSpan):
            inverse_perplexity_score(SequenceLogProbs(np.log([0.5, 0.5]), prompt_len=2))

    def test_positive_log_probability_is_rejected(self):
        with pytest.raises(NonFiniteInput):
            SequenceLogProbs(np.array([0.1]), prompt_len=0)

    def test_matches_product_formula(self, rng):
        for _ in range(1000):
            length = rng.integers(1, 20)
            probs = rng.uniform(0.05, 1.0, size=length)
            prompt = rng.uniform(0.05, 1.0, size=3)
            seq = SequenceLogProbs(np.log(np.concatenate([prompt, probs])), prompt_len=3)

            assert inverse_perplexity_score(seq) == pytest.approx(np.prod(probs) ** (1.0 / length), rel=1e-12)


class TestMultipleChoice:
    def test_uniform(self):
        assert multiple_choice_score([0.0, 0.0, 0.0, 0.0]) == pytest.approx(0.25, abs=1e-15)

    def test_known_softmax(self):
        score = multiple_choice_score([math.log(6.0), math.log(2.0), 0.0, 0.0])

        assert score == pytest.approx(0.6, abs=1e-15)

    def test_brute_force(self, rng):
        for _ in range(200):
            logits = rng.normal(0, 3, size=10)

            assert multiple_choice_score(logits) == pytest.approx(np.max(softmax(logits)), rel=1e-12)

    def test_lower_bound_and_shift_invariance(self, rng):
        for _ in range(2000):
            k = rng.integers(2, 8)
            logits = rng.normal(0, 5, size=k)
            shift = rng.uniform(-50, 50)
            score = multiple_choice_score(logits)

            assert score >= 1.0 / k
            assert abs(multiple_choice_score(logits + shift) - score) <= 1e-12

    def test_too_few_choices(self):
        with pytest.raises(TooFewChoices):
            multiple_choice_score([1.0])

    def test_non_finite(self):
        with pytest.raises(NonFiniteInput):
            multiple_choice_score([float("nan"), 0.0])


def test_token_logits_lookup():
    logits = TokenLogits.from_mapping({"True": 2.0, "False": 0.0, "A": 1.0, "B": 1.0})

    assert token_pair_score(logits, "True", "False") == pytest.approx(expit(2.0))
    assert choice_score(logits, ["A", "B"]) == pytest.approx(0.5)
    with pytest.raises(UnknownColumn):
        token_pair_score(logits, "Yes", "No")


def test_score_batch():
    scores = score_batch("true_false", [(0.0, 0.0), (math.log(3.0), 0.0)])

    np.testing.assert_allclose(scores, [0.5, 0.75])
    with pytest.raises(ValueError):
        score_batch("regression", [])
