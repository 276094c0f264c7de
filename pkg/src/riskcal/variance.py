"""Taylor-linearization variance via influence operators over the combined sample.

Each estimator downstream of the weighting chain is a function of the
original unit weights (cohort base weights, fixed at 1, and survey sampling
weights).  The deviate of unit i is w_i * d(estimate)/d(w_i), propagated in
closed form through the propensity estimating equation, the kernel shares,
the poststratification factors, the Cox score, the baseline, and the risk
transform.  A finite-difference re-fit path provides the audit oracle and
the ``fd`` variance fallback.

Two quantities are deliberately held fixed under weight perturbation: the
survey scale factor ``a`` and the kernel bandwidth ``h`` (both are treated
as tuning constants of the procedure, not estimated functionals).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import RegistrySummary, Sample
from .errors import EstimabilityError, ValidationError
from .propensity import _expit, fit_propensity, resolve_scale
from .pseudoweight import (KW_ONLY, POST_POP, POST_RG, WeightSet, kw_only_weights,
                           kw_weights, poststratify, silverman_bandwidth)
from .survival import (BaselineCumHazard, RiskModelFit, _par_segments,
                       _risk_set_sums, breslow_baseline, fit_weighted_cox,
                       par_baseline)

Z_95 = 1.959963984540054


@dataclass(frozen=True)
class Target:
    """What to differentiate: a beta component, Lambda0(t), or risk(z, t)."""

    kind: str                     # "beta" | "lambda0" | "risk"
    index: int = 0                # beta component
    time: float = 0.0             # lambda0 / risk evaluation time
    z: tuple = ()                 # risk covariate profile
    baseline: str = "breslow"     # "breslow" | "par" for lambda0 / risk


@dataclass(frozen=True)
class DeviateSet:
    """Per-unit influence deviates over the combined cohort + survey sample."""

    target: Target
    cohort_values: np.ndarray
    survey_values: np.ndarray | None


@dataclass(frozen=True)
class PipelineState:
    """Everything produced by one pass of the weighting + fitting chain."""

    cohort: Sample
    survey: Sample | None
    prop_covs: tuple
    risk_covs: tuple
    registry: RegistrySummary | None
    cells: np.ndarray | None
    variant: str
    a: float | None
    pfit: PropensityFit | None
    weights: WeightSet
    fit: RiskModelFit
    cohort_base: np.ndarray


def run_pipeline(cohort: Sample, survey: Sample | None, prop_covs: Sequence[str],
                 risk_covs: Sequence[str], *, registry: RegistrySummary | None = None,
                 cells: np.ndarray | None = None, variant: str = KW_ONLY,
                 a: float | str = "auto", bandwidth: float | str | None = "auto",
                 collapse: bool = False, cohort_base_weights: np.ndarray | None = None,
                 tol: float = 1e-8) -> PipelineState:
    """Run propensity -> kernel weighting -> poststratification -> Cox.

    With ``survey=None`` the chain degenerates to a plain weighted Cox fit on
    the cohort base weights (the naive estimator).
    """
    c = np.ones(cohort.n) if cohort_base_weights is None \
        else np.asarray(cohort_base_weights, dtype=float)
    if survey is None:
        pfit, a_val = None, None
        ws = WeightSet(kw=c.copy(), post_factor=np.ones(cohort.n), final=c.copy(),
                       bandwidth=None, variant=KW_ONLY)
    else:
        a_val = resolve_scale(cohort, survey, a) if a == "auto" else float(a)
        pfit = fit_propensity(cohort, survey, prop_covs, a_val, tol=tol,
                              cohort_base_weights=c)
        h = silverman_bandwidth(pfit.q_cohort) if bandwidth == "auto" else bandwidth
        kw = kw_weights(pfit.q_cohort, pfit.q_survey, survey.w, h,
                        cohort_base_weights=c)
        if variant == KW_ONLY:
            ws = kw_only_weights(kw, h)
        else:
            if registry is None or cells is None:
                raise ValidationError("poststratification requires a registry and cells")
            ws = poststratify(kw, cohort, registry, variant, cells,
                              collapse=collapse, bandwidth=h)
    fit = fit_weighted_cox(cohort, ws.final, risk_covs, tol=tol)
    return PipelineState(
        cohort=cohort, survey=survey, prop_covs=tuple(prop_covs),
        risk_covs=tuple(risk_covs), registry=registry, cells=cells,
        variant=ws.variant, a=a_val, pfit=pfit, weights=ws, fit=fit, cohort_base=c,
    )


def evaluate_targets(state: PipelineState, targets: Sequence[Target]) -> np.ndarray:
    """Point values of the targets at the state's fit."""
    fit = state.fit
    out = np.empty(len(targets))
    bases: dict[str, BaselineCumHazard] = {}
    par_tmax = max((tg.time for tg in targets
                    if tg.kind in ("lambda0", "risk") and tg.baseline == "par"),
                   default=0.0)

    def base(method):
        if method not in bases:
            bases[method] = breslow_baseline(fit) if method == "breslow" \
                else par_baseline(fit, state.registry, t_max=par_tmax)
        return bases[method]

    for k, tg in enumerate(targets):
        if tg.kind == "beta":
            out[k] = fit.beta[tg.index]
        elif tg.kind == "lambda0":
            out[k] = base(tg.baseline)(tg.time)
        elif tg.kind == "risk":
            lam = base(tg.baseline)(tg.time)
            rr = np.exp(np.dot(fit.beta, np.asarray(tg.z, dtype=float)))
            out[k] = -np.expm1(-lam * rr)
        else:
            raise ValidationError(f"unknown target kind {tg.kind!r}")
    return out


# ---------------------------------------------------------------------------
# gradients of the Cox stage with respect to the final (post-KW.S) weights


def _event_quantities(fit: RiskModelFit):
    """Risk-set summaries at distinct event times, in raw (unnormalized) sums."""
    et, dn, dn_z, s0, s1, s2, s0f = _risk_set_sums(fit.z, fit.x, fit.d, fit.w, fit.beta)
    zbar = s1 / s0[:, None]
    return et, dn, s0, zbar


def beta_gradient(fit: RiskModelFit) -> np.ndarray:
    """(n, p) array G with G[i] = d(beta-hat)/d(w_i) (implicit function theorem)."""
    et, dn, s0, zbar = _event_quantities(fit)
    # cumulative C0(t) = sum_{tau<=t} dN/S0, C1(t) = sum dN zbar / S0
    c0 = np.concatenate([[0.0], np.cumsum(dn / s0)])
    c1 = np.vstack([np.zeros(fit.z.shape[1]), np.cumsum((dn / s0)[:, None] * zbar, axis=0)])
    pos = np.searchsorted(et, fit.x, side="right")
    ebz = np.exp(fit.z @ fit.beta)
    du = -ebz[:, None] * (fit.z * c0[pos][:, None] - c1[pos])
    ev = fit.d == 1
    at = np.searchsorted(et, fit.x[ev])
    du[ev] += fit.z[ev] - zbar[at]
    return np.linalg.solve(fit.information, du.T).T


def breslow_gradient(fit: RiskModelFit, t: float):
    """Direct weight gradient of Breslow Lambda0(t) plus d(Lambda0)/d(beta)."""
    et, dn, s0, zbar = _event_quantities(fit)
    keep = et <= t
    c2 = np.concatenate([[0.0], np.cumsum(dn / s0 ** 2)])
    pos = np.searchsorted(et, np.minimum(fit.x, t), side="right")
    ebz = np.exp(fit.z @ fit.beta)
    gdir = -ebz * c2[pos]
    ev = (fit.d == 1) & (fit.x <= t)
    at = np.searchsorted(et, fit.x[ev])
    gdir[ev] += 1.0 / s0[at]
    dldb = -np.sum((dn[keep] / s0[keep])[:, None] * zbar[keep], axis=0)
    return gdir, dldb


def par_gradient(fit: RiskModelFit, registry: RegistrySummary, t: float):
    """Direct weight gradient of the PAR Lambda0(t) plus d(Lambda0)/d(beta)."""
    lo, hi, rate, s0f, s0, s1 = _par_segments(fit, registry, t)
    live = s0 > 0
    seg_len = hi - lo
    g1 = np.zeros(len(lo))
    g2 = np.zeros(len(lo))
    g1[live] = seg_len[live] * rate[live] / s0[live]
    g2[live] = seg_len[live] * rate[live] * s0f[live] / s0[live] ** 2
    cg1 = np.concatenate([[0.0], np.cumsum(g1)])
    cg2 = np.concatenate([[0.0], np.cumsum(g2)])
    # a unit is at risk on every segment that ends at or before its exit time
    pos = np.searchsorted(hi, np.minimum(fit.x, t), side="right")
    ebz = np.exp(fit.z @ fit.beta)
    gdir = cg1[pos] - ebz * cg2[pos]
    dldb = -np.sum(np.where(live, seg_len * rate * s0f / s0 ** 2, 0.0)[:, None]
                   * s1, axis=0)
    return gdir, dldb


# ---------------------------------------------------------------------------
# pullback through poststratification, kernel shares, and the propensity fit


class ChainContext:
    """Shared factors for pulling Cox-stage weight gradients back to the
    original unit weights; build once per fitted state, reuse per target."""

    def __init__(self, state: PipelineState, shared: "ChainContext | None" = None):
        if state.survey is None:
            raise ValidationError("chain pullback needs a survey sample")
        self.state = state
        pfit = state.pfit
        cohort, survey = state.cohort, state.survey
        self.c = state.cohort_base
        self.wsvy = survey.w
        self.h = state.weights.bandwidth
        self.kw = state.weights.kw
        self.qc, self.qs = pfit.q_cohort, pfit.q_survey

        if shared is not None and shared.state.pfit is pfit:
            # identical propensity/kernel stage: reuse the heavy blocks
            for name in ("Xc", "Xs", "pc", "ps", "curvature", "a",
                         "K", "U", "S", "cU_col", "w_over_S"):
                if hasattr(shared, name):
                    setattr(self, name, getattr(shared, name))
        else:
            # propensity design blocks and curvature
            self.Xc = np.column_stack([np.ones(cohort.n), cohort.matrix(state.prop_covs)]) \
                if state.prop_covs else np.ones((cohort.n, 1))
            self.Xs = np.column_stack([np.ones(survey.n), survey.matrix(state.prop_covs)]) \
                if state.prop_covs else np.ones((survey.n, 1))
            self.pc = _expit(self.qc)
            self.ps = _expit(self.qs)
            wstar_c = self.c * self.pc * (1 - self.pc)
            wstar_s = pfit.a * survey.w * self.ps * (1 - self.ps)
            self.curvature = (self.Xc * wstar_c[:, None]).T @ self.Xc \
                + (self.Xs * wstar_s[:, None]).T @ self.Xs
            self.a = pfit.a

            if self.h is not None:
                u = (self.qc[:, None] - self.qs[None, :]) / self.h
                lmax = (-0.5 * u * u).max(axis=0)
                self.K = np.exp(-0.5 * u * u - lmax[None, :])
                self.U = u * self.K
                self.S = self.c @ self.K
                self.cU_col = self.c @ self.U
                self.w_over_S = self.wsvy / self.S

        # poststratification group index lists
        self.groups = []
        if state.variant in (POST_RG, POST_POP):
            events = cohort.d == 1
            statuses = [events] if state.variant == POST_RG else [events, ~events]
            for mask in statuses:
                for g in np.unique(state.cells[mask]):
                    idx = np.flatnonzero(mask & (state.cells == g))
                    if idx.size:
                        self.groups.append(idx)

    def _poststrat_pullback(self, g: np.ndarray) -> np.ndarray:
        """g over final weights -> g over KW pseudoweights."""
        f = self.state.weights.post_factor
        gt = g * f
        for idx in self.groups:
            t_g = self.kw[idx].sum()
            gt[idx] -= f[idx][0] / t_g * np.dot(g[idx], self.kw[idx])
        return gt

    def pullback(self, g: np.ndarray):
        """Deviates w_m * dPhi/dw_m of Phi = sum_i g_i * w_final_i.

        Returns (cohort deviates, survey deviates).
        """
        gt = self._poststrat_pullback(np.asarray(g, dtype=float))
        c, w = self.c, self.wsvy

        if self.h is None:
            # degenerate bandwidth: uniform shares w_hat_i = c_i * W / C
            W, C = w.sum(), c.sum()
            gc_dot = np.dot(gt, c)
            dev_c = c * (gt * W / C - gc_dot * W / C ** 2)
            dev_s = w * (gc_dot / C)
            dphi_dgamma = np.zeros(self.Xc.shape[1])
        else:
            gc = gt * c
            n_col = gc @ self.K                       # N_j
            b_col = n_col / self.S                    # B_j
            wb_over_s = w * b_col / self.S
            # direct terms
            dev_c = c * (gt * self.kw / c - self.K @ wb_over_s)
            dev_s = w * b_col
            # q-path
            dphi_dqc = -(c / self.h) * (gt * (self.U @ self.w_over_S)
                                        - self.U @ wb_over_s)
            dphi_dqs = (w / (self.h * self.S)) * (gc @ self.U - b_col * self.cU_col)
            dphi_dgamma = self.Xc.T @ dphi_dqc + self.Xs.T @ dphi_dqs

        v = np.linalg.solve(self.curvature, dphi_dgamma)
        dev_c = dev_c + self.c * (1 - self.pc) * (self.Xc @ v)
        dev_s = dev_s - self.a * self.wsvy * self.ps * (self.Xs @ v)
        return dev_c, dev_s


def influence_deviates(state: PipelineState, target: Target,
                       chain: ChainContext | None = None) -> DeviateSet:
    """Closed-form influence deviates of one target over the combined sample."""
    g = _target_gradient(state, target)
    if state.survey is None:
        return DeviateSet(target=target, cohort_values=state.cohort_base * g,
                          survey_values=None)
    if chain is None:
        chain = ChainContext(state)
    dev_c, dev_s = chain.pullback(g)
    return DeviateSet(target=target, cohort_values=dev_c, survey_values=dev_s)


def influence_deviate_sets(state: PipelineState,
                           targets: Sequence[Target]) -> list[DeviateSet]:
    """Deviates for several targets, sharing one chain context build."""
    chain = None if state.survey is None else ChainContext(state)
    return [influence_deviates(state, tg, chain=chain) for tg in targets]


def _target_gradient(state: PipelineState, target: Target) -> np.ndarray:
    """Gradient of the target with respect to the Cox-stage weights."""
    fit = state.fit
    G = beta_gradient(fit)
    if target.kind == "beta":
        return G[:, target.index]
    if target.baseline == "breslow":
        gdir, dldb = breslow_gradient(fit, target.time)
        lam = breslow_baseline(fit)(target.time)
    elif target.baseline == "par":
        if target.time > 0:
            gdir, dldb = par_gradient(fit, state.registry, target.time)
            lam = par_baseline(fit, state.registry, t_max=target.time)(target.time)
        else:
            gdir = np.zeros(fit.x.shape[0])
            dldb = np.zeros(fit.z.shape[1])
            lam = 0.0
    else:
        raise ValidationError(f"unknown baseline {target.baseline!r}")
    glam = gdir + G @ dldb
    if target.kind == "lambda0":
        return glam
    if target.kind == "risk":
        zv = np.asarray(target.z, dtype=float)
        rr = float(np.exp(np.dot(fit.beta, zv)))
        scale = np.exp(-lam * rr) * rr
        return scale * (glam + lam * (G @ zv))
    raise ValidationError(f"unknown target kind {target.kind!r}")


# ---------------------------------------------------------------------------
# finite-difference re-fit oracle


def _with_weights(sample: Sample, w: np.ndarray) -> Sample:
    return Sample(kind=sample.kind, ids=sample.ids, x=sample.x, d=sample.d,
                  w=w, stratum=sample.stratum, psu=sample.psu,
                  covariates=dict(sample.covariates))


def fd_deviates(state: PipelineState, targets: Sequence[Target],
                eps: float = 1e-5) -> list[DeviateSet]:
    """Influence deviates by re-fitting the whole chain per perturbed unit.

    Exact contract, O(n) re-fits: intended for audits and small samples.
    The scale factor and bandwidth are held at the state's fitted values.
    """
    def refit(c_base, survey):
        st = run_pipeline(
            state.cohort, survey, state.prop_covs, state.risk_covs,
            registry=state.registry, cells=state.cells, variant=state.variant,
            a=state.a if state.a is not None else "auto",
            bandwidth=state.weights.bandwidth,
            cohort_base_weights=c_base, tol=1e-10,
        )
        return evaluate_targets(st, targets)

    base_vals = refit(state.cohort_base, state.survey)
    n_c = state.cohort.n
    dev_c = np.empty((n_c, len(targets)))
    for i in range(n_c):
        c = state.cohort_base.copy()
        c[i] *= 1.0 + eps
        dev_c[i] = (refit(c, state.survey) - base_vals) / eps
    dev_s = None
    if state.survey is not None:
        n_s = state.survey.n
        dev_s = np.empty((n_s, len(targets)))
        for j in range(n_s):
            w = state.survey.w.copy()
            w[j] *= 1.0 + eps
            dev_s[j] = (refit(state.cohort_base, _with_weights(state.survey, w))
                        - base_vals) / eps
    return [DeviateSet(target=tg, cohort_values=dev_c[:, k],
                       survey_values=None if dev_s is None else dev_s[:, k])
            for k, tg in enumerate(targets)]


# ---------------------------------------------------------------------------
# stratified-cluster variance of a deviate total


def _strat_var(values: np.ndarray, stratum: np.ndarray, psu: np.ndarray,
               single_psu: str) -> float:
    var = 0.0
    for h in np.unique(stratum):
        sel = stratum == h
        psus, inv = np.unique(psu[sel], return_inverse=True)
        totals = np.bincount(inv, weights=values[sel])
        u_h = len(psus)
        if u_h < 2:
            if single_psu == "centered":
                continue  # centered contribution handled by caller
            raise EstimabilityError(f"stratum {h} has a single PSU")
        var += u_h / (u_h - 1) * float(np.sum((totals - totals.mean()) ** 2))
    return var


def tl_variance(deviates: DeviateSet, cohort: Sample | None = None,
                survey: Sample | None = None, single_psu: str = "error") -> float:
    """Between-PSU variance of the deviate totals over the combined design.

    The cohort enters as one extra stratum with each unit its own PSU.
    ``single_psu='centered'`` replaces an inestimable stratum's contribution
    with squared deviations from the overall PSU-total mean (documented
    approximation); the default is a hard error.
    """
    if single_psu not in ("error", "centered"):
        raise ValidationError("single_psu must be 'error' or 'centered'")
    var = 0.0
    if survey is not None and deviates.survey_values is not None:
        vals, strat, psu = deviates.survey_values, survey.stratum, survey.psu
        if single_psu == "centered":
            var += _centered_var(vals, strat, psu)
        else:
            var += _strat_var(vals, strat, psu, single_psu)
    if cohort is not None:
        n = cohort.n
        if n < 2:
            raise EstimabilityError("cohort stratum has a single PSU")
        v = deviates.cohort_values
        var += n / (n - 1) * float(np.sum((v - v.mean()) ** 2))
    return var


def _centered_var(values: np.ndarray, stratum: np.ndarray, psu: np.ndarray) -> float:
    # overall-mean centering for strata that cannot support within-stratum centering
    var = 0.0
    all_totals = []
    singles = []
    for h in np.unique(stratum):
        sel = stratum == h
        psus, inv = np.unique(psu[sel], return_inverse=True)
        totals = np.bincount(inv, weights=values[sel])
        all_totals.extend(totals.tolist())
        if len(psus) < 2:
            singles.append(totals)
        else:
            var += len(psus) / (len(psus) - 1) * float(np.sum((totals - totals.mean()) ** 2))
    if singles:
        grand = float(np.mean(all_totals))
        for totals in singles:
            var += float(np.sum((totals - grand) ** 2))
    return var


# ---------------------------------------------------------------------------
# confidence intervals


def risk_interval(r_hat: float, se: float, level_z: float = Z_95) -> tuple:
    """Wald interval on the complementary-log-log scale (stays inside [0, 1])."""
    if se < 0:
        raise ValidationError("standard error must be nonnegative")
    if r_hat <= 0.0 or se == 0.0:
        return (max(r_hat, 0.0), max(r_hat, 0.0)) if se == 0.0 else (0.0, 0.0)
    if r_hat >= 1.0:
        return (1.0, 1.0)
    eta = np.log(-np.log1p(-r_hat))
    deta = se / abs((1.0 - r_hat) * np.log1p(-r_hat))
    lo = -np.expm1(-np.exp(eta - level_z * deta))
    hi = -np.expm1(-np.exp(eta + level_z * deta))
    return (float(lo), float(hi))
