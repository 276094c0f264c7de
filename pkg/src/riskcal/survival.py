"""Weighted Cox regression, baseline cumulative hazards, and absolute risk.

The partial-likelihood score is solved by damped Newton-Raphson with the
Breslow convention for tied event times.  Baselines come in two flavors:
the weighted Breslow step function, and the attributable-risk deflation of
a registry composite hazard (PAR).  All risk-set quantities are ratios of
weighted sums, so every estimator here is invariant to a global rescaling
of the weights; sums are normalized by the total weight internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data_model import RegistrySummary, Sample
from .errors import ConvergenceError, SeparationError, ValidationError

_SEPARATION_NORM = 30.0


@dataclass(frozen=True)
class RiskModelFit:
    """Converged weighted Cox fit plus the risk-set sums reused downstream.

    ``s0``, ``s0_free`` and ``dn_hat`` are evaluated at the distinct event
    times and normalized by the total weight ``mass``; ``information`` is the
    unnormalized negative score Jacobian.
    """

    beta: np.ndarray
    covariates: tuple
    event_times: np.ndarray
    s0: np.ndarray
    s0_free: np.ndarray
    dn_hat: np.ndarray
    information: np.ndarray
    iterations: int
    score_norm: float
    mass: float
    # unit-level arrays (original sample order) needed by baselines/variance
    x: np.ndarray = field(repr=False, default=None)
    d: np.ndarray = field(repr=False, default=None)
    w: np.ndarray = field(repr=False, default=None)
    z: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class BaselineCumHazard:
    """Baseline cumulative hazard curve.

    Breslow curves are right-continuous steps; PAR curves are continuous and
    piecewise linear.  Evaluation clamps beyond the last knot.
    """

    method: str
    knots: np.ndarray
    values: np.ndarray
    ar: np.ndarray | None = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValidationError("time must be nonnegative")
        if self.method == "breslow":
            idx = np.searchsorted(self.knots, t, side="right")
            vals = np.concatenate([[0.0], self.values])
            out = vals[idx]
        else:
            out = np.interp(t, self.knots, self.values)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RiskEstimate:
    """Absolute risk at (z, t) with optional design-based uncertainty."""

    z: np.ndarray
    t: float
    r_hat: float
    rr_hat: float
    se: float | None = None
    ci: tuple | None = None


def _risk_set_sums(z: np.ndarray, x: np.ndarray, d: np.ndarray, w: np.ndarray,
                   beta: np.ndarray):
    """Risk-set quantities at each distinct event time (single reverse sweep).

    Returns (event_times, dn, s0, s1, s2, s0_free, loglik_terms) where dn,
    s0, s1, s2, s0_free are unnormalized weighted sums and loglik_terms is
    sum_events w * beta'z (the log S0 part is assembled by the caller).
    """
    order = np.argsort(x, kind="stable")
    xs, ds, ws, zs = x[order], d[order], w[order], z[order]
    eb = ws * np.exp(zs @ beta)
    p = z.shape[1]
    # suffix sums: index k holds the sum over units with sorted position >= k
    r0 = np.concatenate([np.cumsum(eb[::-1])[::-1], [0.0]])
    r1 = np.vstack([np.cumsum((eb[:, None] * zs)[::-1], axis=0)[::-1], np.zeros(p)])
    zz = zs[:, :, None] * zs[:, None, :]
    r2 = np.concatenate([np.cumsum((eb[:, None, None] * zz)[::-1], axis=0)[::-1],
                         np.zeros((1, p, p))])
    rf = np.concatenate([np.cumsum(ws[::-1])[::-1], [0.0]])

    ev = ds == 1
    if not np.any(ev):
        raise ValidationError("no events in sample")
    event_times, inv = np.unique(xs[ev], return_inverse=True)
    starts = np.searchsorted(xs, event_times, side="left")
    dn = np.bincount(inv, weights=ws[ev])
    dn_z = np.column_stack([
        np.bincount(inv, weights=ws[ev] * zs[ev, k]) for k in range(p)
    ])
    s0 = r0[starts]
    s1 = r1[starts]
    s2 = r2[starts]
    s0f = rf[starts]
    return event_times, dn, dn_z, s0, s1, s2, s0f


def _cox_score_info(z, x, d, w, beta):
    et, dn, dn_z, s0, s1, s2, s0f = _risk_set_sums(z, x, d, w, beta)
    zbar = s1 / s0[:, None]
    score = dn_z.sum(axis=0) - (dn[:, None] * zbar).sum(axis=0)
    v = s2 / s0[:, None, None] - zbar[:, :, None] * zbar[:, None, :]
    info = (dn[:, None, None] * v).sum(axis=0)
    loglik = float(np.sum(w[d == 1] * (z[d == 1] @ beta)) - np.sum(dn * np.log(s0)))
    return score, info, loglik, (et, dn, s0, s0f)


def fit_weighted_cox(sample: Sample, weights: np.ndarray,
                     covariates: Sequence[str] | None = None,
                     tol: float = 1e-8, max_iter: int = 50) -> RiskModelFit:
    """Solve the weighted partial-likelihood score for the log hazard ratios."""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0) or np.any(~np.isfinite(w)):
        raise ValidationError("weights must be positive and finite")
    if covariates is None:
        covariates = tuple(sample.covariates)
    z = sample.matrix(covariates)
    x, d = sample.x, sample.d
    if not np.any(d == 1):
        raise ValidationError("no events in sample")
    p = z.shape[1]
    beta = np.zeros(p)
    score, info, ll, _ = _cox_score_info(z, x, d, w, beta)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(score)) < tol:
            return cox_model_at(sample, w, covariates, beta, iterations=it - 1)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise ValidationError("singular information matrix (constant covariate in risk sets?)")
        lam = 1.0
        for _ in range(50):
            cand = beta + lam * step
            score_c, info_c, ll_c, _ = _cox_score_info(z, x, d, w, cand)
            if ll_c >= ll - 1e-12 * abs(ll):
                beta, score, info, ll = cand, score_c, info_c, ll_c
                break
            lam *= 0.5
        else:
            raise ConvergenceError("step-halving failed to improve the partial likelihood")
        if np.linalg.norm(beta) > _SEPARATION_NORM:
            raise SeparationError("Cox coefficients diverging (monotone likelihood)")
    if np.max(np.abs(score)) < tol:
        return cox_model_at(sample, w, covariates, beta, iterations=max_iter)
    raise ConvergenceError(
        f"Cox fit did not converge in {max_iter} iterations (score {np.max(np.abs(score)):.3e})"
    )


def cox_model_at(sample: Sample, weights: np.ndarray, covariates: Sequence[str],
                 beta: np.ndarray, iterations: int = 0) -> RiskModelFit:
    """Assemble a RiskModelFit with the risk-set sums evaluated at ``beta``.

    Used at the Newton solution, and directly by tests that pin beta.
    """
    w = np.asarray(weights, dtype=float)
    z = sample.matrix(covariates)
    beta = np.asarray(beta, dtype=float)
    score, info, _, (et, dn, s0, s0f) = _cox_score_info(z, sample.x, sample.d, w, beta)
    mass = float(w.sum())
    return RiskModelFit(
        beta=beta, covariates=tuple(covariates), event_times=et,
        s0=s0 / mass, s0_free=s0f / mass, dn_hat=dn / mass,
        information=info, iterations=iterations,
        score_norm=float(np.max(np.abs(score))), mass=mass,
        x=sample.x, d=sample.d, w=w, z=z,
    )


def breslow_baseline(fit: RiskModelFit) -> BaselineCumHazard:
    """Weighted Breslow baseline: cumulative sum of dN-hat / S0 at event times."""
    if np.any(fit.s0 <= 0):
        raise ValidationError("S0 must be positive at every event time")
    return BaselineCumHazard(
        method="breslow", knots=fit.event_times,
        values=np.cumsum(fit.dn_hat / fit.s0),
    )


def _par_segments(fit: RiskModelFit, registry: RegistrySummary, t_max: float):
    """Breakpoints and per-segment (length, rate, S0_free, S0) for the PAR integral.

    Both factors are step functions, so integration on the union grid of
    hazard breakpoints and observed times is exact.
    """
    if t_max > registry.horizon + 1e-12:
        raise ValidationError(
            f"hazard table covers [0, {registry.horizon}], cannot integrate to {t_max}"
        )
    xs = np.unique(fit.x)
    bp = np.unique(np.concatenate([
        [0.0, t_max],
        registry.hazard_start[registry.hazard_start < t_max],
        registry.hazard_end[registry.hazard_end < t_max],
        xs[(xs > 0) & (xs < t_max)],
    ]))
    lo, hi = bp[:-1], bp[1:]
    # at-risk sums on each open segment: units with x > segment start
    order = np.argsort(fit.x, kind="stable")
    xs_sorted = fit.x[order]
    eb = fit.w[order] * np.exp(fit.z[order] @ fit.beta)
    wf = fit.w[order]
    suf_e = np.concatenate([np.cumsum(eb[::-1])[::-1], [0.0]])
    suf_f = np.concatenate([np.cumsum(wf[::-1])[::-1], [0.0]])
    p = fit.z.shape[1]
    suf_ez = np.vstack([np.cumsum((eb[:, None] * fit.z[order])[::-1], axis=0)[::-1],
                        np.zeros(p)])
    pos = np.searchsorted(xs_sorted, lo, side="right")
    s0 = suf_e[pos]
    s0f = suf_f[pos]
    s1 = suf_ez[pos]
    k = np.searchsorted(registry.hazard_end, lo, side="right")
    k = np.minimum(k, len(registry.hazard_rate) - 1)
    rate = registry.hazard_rate[k]
    if np.any((s0 <= 0) & (rate > 0)):
        t_bad = lo[(s0 <= 0) & (rate > 0)][0]
        raise ValidationError(
            f"empty risk set at t={t_bad:g} where the composite rate is positive"
        )
    return lo, hi, rate, s0f, s0, s1


def par_baseline(fit: RiskModelFit, registry: RegistrySummary,
                 t_max: float | None = None) -> BaselineCumHazard:
    """Attributable-risk deflated registry hazard as a baseline.

    Lambda0(t) = integral of (1 - AR(tau)) * composite_rate(tau) over [0, t]
    with 1 - AR = S0_free / S0; evaluated exactly (both factors piecewise
    constant).  The returned curve is piecewise linear up to ``t_max``.
    """
    if t_max is None:
        t_max = registry.horizon
    lo, hi, rate, s0f, s0, _ = _par_segments(fit, registry, t_max)
    ratio = np.divide(s0f, s0, out=np.zeros_like(s0f), where=s0 > 0)
    incr = (hi - lo) * rate * ratio
    knots = np.concatenate([[0.0], hi])
    values = np.concatenate([[0.0], np.cumsum(incr)])
    # attributable risk at the fit's event times (diagnostic output)
    idx = np.searchsorted(hi, np.minimum(fit.event_times, t_max), side="left")
    idx = np.minimum(idx, len(ratio) - 1)
    ar = 1.0 - ratio[idx]
    return BaselineCumHazard(method="par", knots=knots, values=values, ar=ar)


def absolute_risk(beta: np.ndarray, baseline: BaselineCumHazard,
                  z, t: float) -> RiskEstimate:
    """Point estimate r = 1 - exp(-Lambda0(t) * exp(beta'z))."""
    if t < 0:
        raise ValidationError("time must be nonnegative")
    z = np.asarray(z, dtype=float)
    rr = float(np.exp(np.dot(beta, z)))
    lam = float(baseline(t))
    return RiskEstimate(z=z, t=float(t), r_hat=float(-np.expm1(-lam * rr)), rr_hat=rr)


def compute_fp_truth(fp: Sample, covariates: Sequence[str] | None = None,
                     tol: float = 1e-8, max_iter: int = 50):
    """Finite population parameters: unit-weight Cox fit plus Breslow baseline.

    These are the bias targets for every simulation metric.
    """
    if np.any(fp.w != 1.0):
        raise ValidationError("finite population must carry unit weights")
    fit = fit_weighted_cox(fp, np.ones(fp.n), covariates, tol=tol, max_iter=max_iter)
    return fit.beta, breslow_baseline(fit), fit
