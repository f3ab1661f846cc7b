import logging

import numpy as np
import pytest
from scipy.special import expit, logit

from App.calibration import regression
from App.calibration.errors import NoConvergence, RankDeficient
from App.calibration.regression import (
    LS_GTOL,
    fit_group_logistic,
    fit_group_shifts,
    fit_linear_scaling,
    independent_columns,
    newton_logistic,
)


def test_independent_columns_drops_the_redundant_one():
    design = np.array([[1, 0, 1], [0, 1, 1], [1, 0, 1], [0, 1, 1]], dtype=float)

    kept, dropped = independent_columns(design, [0, 1, 2])

    assert kept == [0, 1]
    assert dropped == [2]


def test_group_shifts_recover_per_group_bias():
    design = np.array([[1, 1, 0], [1, 1, 0], [1, 0, 1], [1, 0, 1]], dtype=bool)
    offset = np.array([0.3, 0.3, 0.7, 0.7])
    labels = np.array([1, 0, 1, 0])

    fit = fit_group_shifts(offset, labels, design, ["ALL", "a", "b"], order=[1, 2, 0])

    np.testing.assert_allclose(fit.coefficients, [0.0, 0.2, -0.2], atol=1e-9)
    assert fit.dropped == [0]


def test_group_shifts_with_nothing_to_fit():
    design = np.zeros((3, 1), dtype=bool)

    with pytest.raises(RankDeficient):
        fit_group_shifts(np.zeros(3), np.ones(3), design, ["ALL"], order=[0])


def test_linear_scaling_recovers_parameters(rng):
    scores = rng.uniform(0.02, 0.98, size=100_000)
    labels = (rng.random(100_000) < expit(0.5 + 2.0 * logit(scores))).astype(int)

    fit = fit_linear_scaling(scores, labels)

    assert fit.alpha == pytest.approx(0.5, abs=0.1)
    assert fit.beta == pytest.approx(2.0, abs=0.1)
    assert fit.converged == (fit.grad_norm <= LS_GTOL)


def test_linear_scaling_reports_best_iterate_when_capped(rng, monkeypatch, caplog):
    scores = rng.uniform(0.02, 0.98, size=5000)
    labels = (rng.random(5000) < expit(0.5 + 2.0 * logit(scores))).astype(int)
    identity_mse = np.mean((scores - labels) ** 2)
    monkeypatch.setattr(regression, "LS_MAXITER", 1)

    with caplog.at_level(logging.WARNING):
        fit = fit_linear_scaling(scores, labels)

    assert not fit.converged
    assert fit.grad_norm > LS_GTOL
    assert fit.mse <= identity_mse + 1e-12
    assert "did not converge" in caplog.text


def test_linear_scaling_on_a_single_level_matches_the_label_mean():
    scores = np.full(40, 0.3)
    labels = np.array([1] * 22 + [0] * 18)

    fit = fit_linear_scaling(scores, labels)

    assert expit(fit.alpha + fit.beta * logit(0.3)) == pytest.approx(0.55, abs=1e-6)


def test_newton_matches_closed_form_intercept(rng):
    y = (rng.random(1000) < 0.3).astype(float)
    x = np.ones((1000, 1))

    fit = newton_logistic(x, y, np.zeros(1))

    assert expit(fit.coefficients[0]) == pytest.approx(y.mean(), abs=1e-8)
    assert fit.grad_norm < 1e-8


def test_newton_reports_best_iterate_when_capped(rng):
    y = (rng.random(1000) < 0.3).astype(float)
    x = np.column_stack([np.ones(1000), rng.normal(size=1000)])

    with pytest.raises(NoConvergence) as e:
        newton_logistic(x, y, np.zeros(2), max_iter=0)

    assert e.value.best is not None


def test_group_logistic_recovers_coefficients(rng):
    scores = rng.uniform(0.02, 0.98, size=100_000)
    design = np.ones((100_000, 1), dtype=bool)
    labels = (rng.random(100_000) < expit(1.5 * logit(scores) - 0.5)).astype(int)

    fit = fit_group_logistic(scores, labels, design, ["ALL"], order=[0])

    assert fit.coefficients[0] == pytest.approx(1.5, abs=0.1)
    assert fit.coefficients[1] == pytest.approx(-0.5, abs=0.1)
    assert fit.ridge == 0.0


def test_group_logistic_regularizes_separable_data(rng, caplog):
    scores = rng.uniform(0.05, 0.95, size=400)
    labels = (scores > 0.5).astype(int)
    design = np.ones((400, 1), dtype=bool)

    fit = fit_group_logistic(scores, labels, design, ["ALL"], order=[0])

    assert fit.ridge > 0.0
    assert "refitting with ridge" in caplog.text
    predicted = expit(fit.coefficients[0] * logit(scores) + fit.coefficients[1])
    assert np.mean((predicted >= 0.5) == labels) >= 0.97
