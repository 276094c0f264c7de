"""Scaled-weight logistic propensity model on the combined cohort + survey sample.

Cohort membership (vs. survey) is regressed on shared covariates with the
survey class down-weighted by a scale factor ``a``, solved by damped
Newton-Raphson on the weighted log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import Sample
from .errors import ConvergenceError, SeparationError, ValidationError

_SEPARATION_NORM = 30.0


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log1pexp(x: np.ndarray) -> np.ndarray:
    out = np.where(x > 0, x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out


@dataclass(frozen=True)
class PropensityFit:
    """Fitted coefficients (intercept first) and per-unit linear predictors."""

    gamma: np.ndarray
    a: float
    q_cohort: np.ndarray
    q_survey: np.ndarray
    iterations: int
    score_norm: float


def resolve_scale(cohort: Sample, survey: Sample, mode="auto") -> float:
    """Scale factor for the survey class in the propensity fit.

    ``auto`` uses n_s / sum(survey weights), the estimable stand-in for the
    sampling fraction n_s / M.  An explicit value must lie in (0, 1).
    """
    if mode == "auto":
        return survey.n / float(survey.w.sum())
    a = float(mode)
    if not 0.0 < a < 1.0:
        raise ValidationError(f"scale factor must be in (0, 1), got {a}")
    return a


def fit_weighted_logit(X: np.ndarray, y: np.ndarray, w: np.ndarray,
                       tol: float = 1e-8, max_iter: int = 100):
    """Solve sum_i w_i (y_i - expit(X gamma)) x_i = 0 by damped Newton.

    Returns (gamma, iterations, score_sup_norm).  Step-halving keeps the
    weighted log-likelihood non-decreasing from the gamma = 0 start.
    """
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise ValidationError("propensity design matrix is rank deficient")
    gamma = np.zeros(p)

    def loglik(g):
        eta = X @ g
        return float(np.sum(w * (y * eta - _log1pexp(eta))))

    ll = loglik(gamma)
    score_norm = np.inf
    for it in range(1, max_iter + 1):
        eta = X @ gamma
        prob = _expit(eta)
        score = X.T @ (w * (y - prob))
        score_norm = float(np.max(np.abs(score)))
        if score_norm < tol:
            return gamma, it - 1, score_norm
        info = (X * (w * prob * (1 - prob))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise ValidationError("singular information matrix in propensity fit")
        # step-halving until the likelihood does not decrease
        lam, improved = 1.0, False
        for _ in range(50):
            cand = gamma + lam * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                gamma, ll, improved = cand, ll_new, True
                break
            lam *= 0.5
        if not improved:
            break
        if np.linalg.norm(gamma) > _SEPARATION_NORM:
            raise SeparationError(
                "propensity coefficients diverging (likely complete separation)"
            )
    eta = X @ gamma
    score = X.T @ (w * (y - _expit(eta)))
    score_norm = float(np.max(np.abs(score)))
    if score_norm < tol:
        return gamma, max_iter, score_norm
    raise ConvergenceError(
        f"propensity fit did not converge in {max_iter} iterations (score {score_norm:.3e})"
    )


def fit_propensity(cohort: Sample, survey: Sample, covariate_spec: Sequence[str],
                   a: float, tol: float = 1e-8, max_iter: int = 100,
                   cohort_base_weights: np.ndarray | None = None) -> PropensityFit:
    """Fit the scaled-weight propensity model and return linear predictors.

    ``cohort_base_weights`` generalizes the cohort's unit weights (default 1);
    the variance machinery perturbs them to trace weight sensitivity.
    """
    if not 0.0 < a < 1.0:
        raise ValidationError(f"scale factor must be in (0, 1), got {a}")
    Xc = np.column_stack([np.ones(cohort.n), cohort.matrix(covariate_spec)]) \
        if covariate_spec else np.ones((cohort.n, 1))
    Xs = np.column_stack([np.ones(survey.n), survey.matrix(covariate_spec)]) \
        if covariate_spec else np.ones((survey.n, 1))
    X = np.vstack([Xc, Xs])
    y = np.concatenate([np.ones(cohort.n), np.zeros(survey.n)])
    wc = np.ones(cohort.n) if cohort_base_weights is None else np.asarray(cohort_base_weights, dtype=float)
    w = np.concatenate([wc, a * survey.w])
    gamma, iters, score_norm = fit_weighted_logit(X, y, w, tol=tol, max_iter=max_iter)
    return PropensityFit(
        gamma=gamma, a=a,
        q_cohort=Xc @ gamma, q_survey=Xs @ gamma,
        iterations=iters, score_norm=score_norm,
    )
