"""Solvers behind the parametric calibrators and the logit-linear patches."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from scipy.special import expit

from App.calibration.data_model import DEFAULT_CLIP, clipped_logit
from App.calibration.errors import NoConvergence, RankDeficient

logger = logging.getLogger(__name__)

LS_GTOL = 1e-9
LS_MAXITER = 500
NEWTON_GTOL = 1e-8
NEWTON_MAXITER = 200
NORMAL_EQ_RIDGE = 1e-10
SEPARATION_NORM = 30.0
SEPARATION_RIDGE = 1e-4


@dataclass(frozen=True)
class LinearScalingFit:
    alpha: float
    beta: float
    mse: float
    converged: bool
    iterations: int
    grad_norm: float


def _ls_objective(theta: np.ndarray, z: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    p = expit(theta[0] + theta[1] * z)
    r = p - y
    w = 2.0 * r * p * (1.0 - p)
    return float(np.mean(r**2)), np.array([np.mean(w), np.mean(w * z)])


def fit_linear_scaling(
    scores: np.ndarray, labels: np.ndarray, clip: float = DEFAULT_CLIP
) -> LinearScalingFit:
    """Minimize the MSE of expit(alpha + beta * logit f) by BFGS from the identity (0, 1)."""
    z = clipped_logit(np.asarray(scores, dtype=np.float64), clip)
    y = np.asarray(labels, dtype=np.float64)
    start = np.array([0.0, 1.0])
    start_mse, _ = _ls_objective(start, z, y)

    result = minimize(
        _ls_objective,
        start,
        args=(z, y),
        jac=True,
        method="BFGS",
        options={"gtol": LS_GTOL, "maxiter": LS_MAXITER},
    )
    theta, value = result.x, float(result.fun)
    if not value <= start_mse:
        theta, value = start, start_mse
    _, grad = _ls_objective(theta, z, y)
    grad_norm = float(np.max(np.abs(grad)))
    converged = grad_norm <= LS_GTOL
    if not converged:
        logger.warning(
            f"Linear scaling did not converge after {result.nit} iterations "
            f"(|grad|={grad_norm:.3g}, {result.message}); keeping best iterate"
        )
    return LinearScalingFit(float(theta[0]), float(theta[1]), value, converged, int(result.nit), grad_norm)


def independent_columns(design: np.ndarray, order: Sequence[int]) -> Tuple[List[int], List[int]]:
    """Greedily keep columns in ``order`` that raise the rank of the kept set."""
    gram = design.T @ design
    kept: List[int] = []
    dropped: List[int] = []
    for j in order:
        trial = kept + [j]
        sub = gram[np.ix_(trial, trial)]
        if np.linalg.matrix_rank(sub) == len(trial):
            kept.append(j)
        else:
            dropped.append(j)
    return kept, dropped


@dataclass(frozen=True)
class GroupShiftFit:
    coefficients: np.ndarray
    kept: List[int]
    dropped: List[int]


def fit_group_shifts(
    offset: np.ndarray, labels: np.ndarray, design: np.ndarray, names: Sequence[str], order: Sequence[int]
) -> GroupShiftFit:
    """Least squares of (y - offset) on the indicator columns, offset coefficient fixed at 1."""
    kept, dropped = independent_columns(design.astype(np.float64), order)
    if dropped:
        logger.warning(f"Dropping linearly dependent group columns: {[names[j] for j in dropped]}")
    if not kept:
        raise RankDeficient([names[j] for j in dropped])
    x = design[:, kept].astype(np.float64)
    target = np.asarray(labels, dtype=np.float64) - offset
    lhs = x.T @ x + NORMAL_EQ_RIDGE * np.eye(len(kept))
    rhs = x.T @ target
    solution = scipy.linalg.solve(lhs, rhs, assume_a="pos")
    coefficients = np.zeros(design.shape[1])
    coefficients[kept] = solution
    return GroupShiftFit(coefficients, kept, dropped)


@dataclass
class LogisticFit:
    coefficients: np.ndarray
    iterations: int
    grad_norm: float
    ridge: float = 0.0
    kept: List[int] = field(default_factory=list)
    dropped: List[int] = field(default_factory=list)


def _cross_entropy(theta: np.ndarray, x: np.ndarray, y: np.ndarray, ridge: float) -> float:
    eta = x @ theta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + 0.5 * ridge * theta @ theta)


def newton_logistic(
    x: np.ndarray,
    y: np.ndarray,
    start: np.ndarray,
    ridge: float = 0.0,
    tol: float = NEWTON_GTOL,
    max_iter: int = NEWTON_MAXITER,
    norm_limit: float = np.inf,
) -> LogisticFit:
    """Damped Newton (IRLS) on the mean cross-entropy with optional ridge."""
    n = len(y)
    theta = start.astype(np.float64).copy()
    loss = _cross_entropy(theta, x, y, ridge)
    grad_norm = np.inf
    for it in range(max_iter + 1):
        p = expit(x @ theta)
        grad = x.T @ (p - y) / n + ridge * theta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < tol:
            return LogisticFit(theta, it, grad_norm, ridge)
        if it == max_iter or np.linalg.norm(theta) > norm_limit:
            break
        weights = p * (1.0 - p)
        hessian = (x * weights[:, None]).T @ x / n + ridge * np.eye(len(theta))
        try:
            step = scipy.linalg.solve(hessian, grad, assume_a="sym")
        except (scipy.linalg.LinAlgError, ValueError):
            step = scipy.linalg.lstsq(hessian, grad)[0]
        t = 1.0
        slope = float(grad @ step)
        for _ in range(40):
            candidate = theta - t * step
            new_loss = _cross_entropy(candidate, x, y, ridge)
            if new_loss <= loss - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            candidate = theta - t * step
            new_loss = _cross_entropy(candidate, x, y, ridge)
        theta, loss = candidate, new_loss
        logger.debug(f"Newton iteration {it}: loss {loss:.12g}, |grad| {grad_norm:.3g}, step {t:g}")
    raise NoConvergence(
        f"Newton solver stopped after {it} iterations with |grad|={grad_norm:.3g}",
        best=LogisticFit(theta, it, grad_norm, ridge),
    )


def fit_group_logistic(
    scores: np.ndarray,
    labels: np.ndarray,
    design: np.ndarray,
    names: Sequence[str],
    order: Sequence[int],
    clip: float = DEFAULT_CLIP,
) -> LogisticFit:
    """expit(theta_0 * logit f + sum theta_g g) by maximum likelihood.

    Columns of ``design`` are selected as in :func:`fit_group_shifts`; the
    logit column always comes first. Diverging coefficients trigger a
    ridge-regularized refit.
    """
    z = clipped_logit(np.asarray(scores, dtype=np.float64), clip)
    y = np.asarray(labels, dtype=np.float64)
    full = np.column_stack([z, design.astype(np.float64)])
    kept, dropped = independent_columns(full, [0] + [j + 1 for j in order])
    if dropped:
        logger.warning(
            f"Dropping linearly dependent columns: "
            f"{['logit' if j == 0 else names[j - 1] for j in dropped]}"
        )
    if not kept:
        raise RankDeficient(["logit"] + list(names))
    x = full[:, kept]
    start = np.array([1.0 if j == 0 else 0.0 for j in kept])

    try:
        fit = newton_logistic(x, y, start, norm_limit=SEPARATION_NORM)
        if np.linalg.norm(fit.coefficients) > SEPARATION_NORM:
            raise NoConvergence("coefficients diverged", best=fit)
    except NoConvergence as e:
        if e.best is None or np.linalg.norm(e.best.coefficients) <= SEPARATION_NORM:
            raise
        logger.warning(
            f"Coefficients diverged (|theta| > {SEPARATION_NORM:g}); "
            f"refitting with ridge {SEPARATION_RIDGE:g}"
        )
        fit = newton_logistic(x, y, start, ridge=SEPARATION_RIDGE)

    coefficients = np.zeros(full.shape[1])
    coefficients[0] = 1.0
    coefficients[kept] = fit.coefficients
    fit.coefficients = coefficients
    fit.kept = [j - 1 for j in kept if j > 0]
    fit.dropped = [j - 1 for j in dropped if j > 0]
    return fit
